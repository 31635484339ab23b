/** Entry point: mount the console against the service named in the URL.
 *
 *   index.html?base=http://127.0.0.1:8321&session=my-run
 *
 * `base` defaults to the page's own origin; `session` pre-attaches.
 */

import { ApiClient } from "./api.js";
import { mountApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("base") ?? window.location.origin;
const api = new ApiClient(base);
const root = document.getElementById("app");
if (!root) throw new Error("index.html must provide #app");

const app = mountApp(root, api);
const session = params.get("session");
if (session) {
  void app.attachSession(session);
} else {
  void app.start();
}
