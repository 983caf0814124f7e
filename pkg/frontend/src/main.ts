import { SteeringApp } from "./app.js";

new SteeringApp().start();
