import { ApiClient } from "./api.js";
import { App } from "./app.js";

// default to the local service; ?api=... points the UI elsewhere
const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "http://127.0.0.1:8080/v1";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const app = new App(root, new ApiClient(base));
void app.start();
