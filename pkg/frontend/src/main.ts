import { initApp } from './app.js';
import { createClient } from './client.js';

const client = createClient(''); // same-origin service
void initApp(document, client);
