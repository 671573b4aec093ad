// Entry point for the static bundle served from /console.
import { App } from "./app.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("console shell is missing its #app mount point");
}
new App(root, { baseUrl: window.location.origin }).mount();
