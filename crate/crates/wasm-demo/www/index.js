// Built with `wasm-pack build --target web --out-dir www/pkg` from crates/wasm-demo.
import init, { lp_attack, prc_geometry, recover } from "./pkg/sbsr_wasm.js";

const $ = (id) => document.getElementById(id);
const SCALE = 80;
const state = { v: [1.5, 1.0], g: [1.0, 0.4] };

function toCanvas([x, y]) {
  return [200 + x * SCALE, 200 - y * SCALE];
}

function fromCanvas(event) {
  const r = $("plane").getBoundingClientRect();
  return [(event.clientX - r.left - 200) / SCALE, (200 - (event.clientY - r.top)) / SCALE];
}

function ballPath(ctx, norm, eps) {
  ctx.beginPath();
  for (let k = 0; k <= 256; k++) {
    const t = (2 * Math.PI * k) / 256;
    const c = Math.cos(t), s = Math.sin(t);
    const p = norm === "l2" ? 2 : norm === "l1" ? 1 : Infinity;
    const n = p === Infinity ? Math.max(Math.abs(c), Math.abs(s)) : (Math.abs(c) ** p + Math.abs(s) ** p) ** (1 / p);
    const [x, y] = toCanvas([(eps * c) / n, (eps * s) / n]);
    k === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  }
  ctx.stroke();
}

function arrow(ctx, from, to, color) {
  const [a, b] = [toCanvas(from), toCanvas(to)];
  ctx.strokeStyle = color;
  ctx.beginPath();
  ctx.moveTo(...a);
  ctx.lineTo(...b);
  ctx.stroke();
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(...b, 4, 0, 2 * Math.PI);
  ctx.fill();
}

function drawPlane() {
  const norm = $("norm").value;
  const eps = Number($("eps").value);
  $("eps-value").textContent = eps.toFixed(2);
  const ctx = $("plane").getContext("2d");
  ctx.clearRect(0, 0, 400, 400);
  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  ctx.moveTo(0, 200); ctx.lineTo(400, 200); ctx.moveTo(200, 0); ctx.lineTo(200, 400);
  ctx.stroke();
  ctx.strokeStyle = "#888";
  ballPath(ctx, norm, eps);
  const [px, py, sx, sy] = lp_attack(...state.v, ...state.g, norm, eps);
  arrow(ctx, [0, 0], state.g, "#aaa");
  arrow(ctx, [0, 0], [sx, sy], "#2b5fc0");
  arrow(ctx, state.v, [px, py], "#d03a2b");
  arrow(ctx, state.v, state.v, "#000");
}

function drawGeometry() {
  const tilt = Number($("tilt").value);
  $("tilt-value").textContent = tilt.toFixed(2);
  const [gamma, theta, margin] = prc_geometry(tilt, 2000);
  $("geometry").textContent =
    `covering radius  ${gamma.toFixed(4)} rad\n` +
    `angle to others  ${theta.toFixed(4)} rad\n` +
    `margin           ${margin.toFixed(4)} rad  (${margin > 0 ? "recovery certified" : "not certified"})`;
  drawBars();
}

function drawBars() {
  const tilt = Number($("tilt").value);
  const norms = recover(tilt, Number($("signal").value), Number($("attack").value));
  const names = ["class 0", "class 1", "attack (0, 0)"];
  const top = Math.max(...norms, 1e-9);
  $("bars").innerHTML = "";
  norms.forEach((n, k) => {
    const bar = document.createElement("div");
    bar.style.width = `${Math.max(2, (300 * n) / top)}px`;
    bar.textContent = `${names[k]}: ${n.toFixed(4)}`;
    $("bars").appendChild(bar);
  });
}

await init();
$("plane").addEventListener("click", (e) => {
  if (e.shiftKey) state.g = fromCanvas(e);
  else state.v = fromCanvas(e);
  drawPlane();
});
for (const id of ["norm", "eps"]) $(id).addEventListener("input", drawPlane);
$("tilt").addEventListener("input", drawGeometry);
for (const id of ["signal", "attack"]) $(id).addEventListener("input", drawBars);
drawPlane();
drawGeometry();
