import init, { release, static_fit, stribeck_curve } from "./pkg/sparc_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// Draws each series as a polyline (or dots) on shared axes.
function plot(canvas, series, xlabel, ylabel) {
  const dpr = window.devicePixelRatio || 1;
  const w = canvas.clientWidth, h = canvas.clientHeight;
  canvas.width = w * dpr;
  canvas.height = h * dpr;
  const g = canvas.getContext("2d");
  g.scale(dpr, dpr);
  g.clearRect(0, 0, w, h);
  let [x0, x1, y0, y1] = [Infinity, -Infinity, Infinity, -Infinity];
  for (const s of series) {
    for (let i = 0; i < s.x.length; i++) {
      x0 = Math.min(x0, s.x[i]); x1 = Math.max(x1, s.x[i]);
      y0 = Math.min(y0, s.y[i]); y1 = Math.max(y1, s.y[i]);
    }
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  const pad = { l: 60, r: 10, t: 10, b: 30 };
  const px = (x) => pad.l + (x - x0) / (x1 - x0) * (w - pad.l - pad.r);
  const py = (y) => h - pad.b - (y - y0) / (y1 - y0) * (h - pad.t - pad.b);
  g.strokeStyle = "#999";
  g.strokeRect(pad.l, pad.t, w - pad.l - pad.r, h - pad.t - pad.b);
  g.fillStyle = "#444";
  g.font = "11px sans-serif";
  g.fillText(y1.toPrecision(3), 4, pad.t + 10);
  g.fillText(y0.toPrecision(3), 4, h - pad.b);
  g.fillText(x0.toPrecision(3), pad.l, h - 12);
  g.fillText(x1.toPrecision(3), w - pad.r - 40, h - 12);
  g.fillText(xlabel, w / 2, h - 4);
  g.fillText(ylabel, 4, h / 2);
  if (y0 < 0 && y1 > 0) {
    g.strokeStyle = "#ddd";
    g.beginPath(); g.moveTo(pad.l, py(0)); g.lineTo(w - pad.r, py(0)); g.stroke();
  }
  for (const s of series) {
    g.strokeStyle = g.fillStyle = s.color;
    if (s.dots) {
      for (let i = 0; i < s.x.length; i++) g.fillRect(px(s.x[i]) - 1, py(s.y[i]) - 1, 2, 2);
      continue;
    }
    g.beginPath();
    for (let i = 0; i < s.x.length; i++) {
      const [a, b] = [px(s.x[i]), py(s.y[i])];
      i ? g.lineTo(a, b) : g.moveTo(a, b);
    }
    g.stroke();
  }
}

function runRelease() {
  try {
    const r = release(num("rel-k"), num("rel-b"), num("rel-scale"), num("rel-dur"));
    const t = r.t;
    plot($("rel-plot"), [
      { x: t, y: r.reference, color: "#36c" },
      { x: t, y: r.x, color: "#c33" },
    ], "t (s)", "x (m)");
    $("rel-out").textContent =
      `NRMSE ${(100 * r.nrmse).toFixed(2)} %   m_eff ${r.m_eff.toFixed(4)} kg   status ${r.status}`;
    r.free();
  } catch (e) {
    $("rel-out").textContent = String(e);
  }
}

function runStatic() {
  try {
    const s = static_fit(num("st-k"), num("st-noise"), num("st-seed"), 20);
    const x = s.x;
    const lo = Math.min(...x), hi = Math.max(...x);
    plot($("st-plot"), [
      { x, y: s.f, color: "#c33", dots: true },
      { x: [lo, hi], y: [s.k_hat * lo + s.intercept, s.k_hat * hi + s.intercept], color: "#36c" },
    ], "x displacement (m)", "F_x (N)");
    $("st-out").textContent =
      `k_hat ${s.k_hat.toFixed(2)} N/m   R² ${s.r2.toFixed(4)}   error ${s.rel_err_pct.toFixed(2)} %`;
    s.free();
  } catch (e) {
    $("st-out").textContent = String(e);
  }
}

function drawFriction() {
  const n = 401, qdMax = 1.0;
  const tau = stribeck_curve(num("fr-tc"), num("fr-ts"), num("fr-b"), num("fr-qs"), num("fr-a"), qdMax, n);
  const qd = Array.from({ length: n }, (_, i) => -qdMax + 2 * qdMax * i / (n - 1));
  plot($("fr-plot"), [{ x: qd, y: tau, color: "#393" }], "joint speed (rad/s)", "τ (N·m)");
  $("fr-out").textContent = `peak ${Math.max(...tau).toFixed(4)} N·m   at 1 rad/s ${tau[n - 1].toFixed(4)} N·m`;
}

await init();
$("rel-run").addEventListener("click", runRelease);
$("st-run").addEventListener("click", runStatic);
for (const id of ["fr-tc", "fr-ts", "fr-b", "fr-qs", "fr-a"]) $(id).addEventListener("input", drawFriction);
drawFriction();
runRelease();
