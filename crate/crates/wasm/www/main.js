import init, { generate_series, lag_scores, correlated_output } from "./pkg/cab_wasm.js";

const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const $ = (id) => document.getElementById(id);
let current = null;

function num(id) {
  return Number($(id).value);
}

function status(msg) {
  $("status").textContent = msg || "";
}

// Draws each column of a row-major t x d array as a line, one color per feature.
function plotLines(canvas, values, t, d) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    lo = Math.min(lo, v);
    hi = Math.max(hi, v);
  }
  const span = hi - lo || 1;
  const x = (i) => (i / Math.max(t - 1, 1)) * (width - 10) + 5;
  const y = (v) => height - 5 - ((v - lo) / span) * (height - 10);
  for (let j = 0; j < d; j++) {
    ctx.strokeStyle = COLORS[j % COLORS.length];
    ctx.beginPath();
    for (let i = 0; i < t; i++) {
      const px = x(i);
      const py = y(values[i * d + j]);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    }
    ctx.stroke();
  }
}

function plotScores(canvas, combined, selected) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const n = combined.length;
  let hi = 0;
  for (let l = 1; l < n; l++) hi = Math.max(hi, combined[l]);
  const bar = (width - 10) / Math.max(n - 1, 1);
  const chosen = new Set(selected);
  for (let l = 1; l < n; l++) {
    const h = (combined[l] / (hi || 1)) * (height - 20);
    ctx.fillStyle = chosen.has(l) ? "#d62728" : "#9ab";
    ctx.fillRect(5 + (l - 1) * bar, height - 15 - h, Math.max(bar - 1, 1), h);
  }
  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  for (const l of selected) ctx.fillText(String(l), 5 + (l - 1) * bar, height - 2);
}

function generate() {
  const t = num("t");
  const d = num("d");
  current = { t, d, values: generate_series(t, d, $("lags").value, num("noise"), num("ar"), num("sin"), num("seed")) };
  plotLines($("series"), current.values, t, d);
}

function score() {
  if (!current) generate();
  const report = lag_scores(current.values, current.t, current.d, num("lambda"), num("c"));
  const lags = Array.from(report.lags);
  $("selected").textContent = lags.join(", ");
  plotScores($("scores"), report.combined, lags);
}

function attend() {
  if (!current) generate();
  const out = correlated_output(current.values, current.t, current.d, num("lambda"), num("beta"), num("tau"), num("c"));
  plotLines($("output"), out, current.t, current.d);
}

function guarded(f) {
  return () => {
    try {
      status("");
      f();
    } catch (e) {
      status(String(e));
    }
  };
}

await init();
$("generate").addEventListener("click", guarded(() => { generate(); score(); attend(); }));
$("score").addEventListener("click", guarded(score));
$("attend").addEventListener("click", guarded(attend));
for (const id of ["lambda", "beta"]) {
  $(id).addEventListener("input", () => { $(`${id}-v`).textContent = $(id).value; });
}
guarded(() => { generate(); score(); attend(); })();
