import { ApiClient } from "./api.js";
import { ChatApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const app = new ChatApp(root, new ApiClient());
  void app.init();
}
