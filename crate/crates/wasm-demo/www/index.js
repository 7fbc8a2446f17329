import init, { powerMeanCurve, mixingCurve, trainBlobs } from "./pkg/wpm_wasm.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// series: [{label, xs, ys}]
function chart(canvas, title, series, { logY = false } = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, L = 60, R = 140, T = 24, B = 30;
  ctx.clearRect(0, 0, W, H);
  const fy = logY ? (v) => Math.log10(Math.max(v, 1e-300)) : (v) => v;
  const xs = series.flatMap((s) => s.xs);
  const ys = series.flatMap((s) => s.ys.map(fy)).filter(Number.isFinite);
  let [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (x1 === x0) x1 = x0 + 1;
  if (y1 === y0) { y0 -= 0.5; y1 += 0.5; }
  const px = (x) => L + ((x - x0) / (x1 - x0)) * (W - L - R);
  const py = (y) => H - B - ((y - y0) / (y1 - y0)) * (H - T - B);

  ctx.strokeStyle = "#888";
  ctx.strokeRect(L, T, W - L - R, H - T - B);
  ctx.fillStyle = "#222";
  ctx.font = "13px sans-serif";
  ctx.fillText(title, L, 16);
  ctx.font = "11px sans-serif";
  for (let k = 0; k <= 4; k++) {
    const y = y0 + ((y1 - y0) * k) / 4;
    const text = logY ? `1e${y.toFixed(1)}` : y.toPrecision(3);
    ctx.fillText(text, 4, py(y) + 4);
    const x = x0 + ((x1 - x0) * k) / 4;
    ctx.fillText(String(Math.round(x * 100) / 100), px(x) - 8, H - 10);
  }
  series.forEach((s, k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.beginPath();
    s.xs.forEach((x, n) => {
      const y = py(fy(s.ys[n]));
      n === 0 ? ctx.moveTo(px(x), y) : ctx.lineTo(px(x), y);
    });
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.label, W - R + 10, T + 14 + 16 * k);
  });
}

function guarded(errId, f) {
  return () => {
    $(errId).textContent = "";
    try { f(); } catch (e) { $(errId).textContent = String(e.message ?? e); }
  };
}

const drawPowerMean = guarded("pm-err", () => {
  const w = num("pm-w");
  const ys = powerMeanCurve(new Float64Array([num("pm-a"), num("pm-b")]), new Float64Array([w, 1 - w]), num("pm-p"));
  const xs = Array.from(ys, (_, k) => k + 1);
  chart($("pm-canvas"), "power mean vs p", [{ label: "mean", xs, ys: Array.from(ys) }]);
});

const drawMixing = guarded("mx-err", () => {
  const flat = mixingCurve(num("mx-m"), num("mx-d"), num("mx-b"), 60, num("mx-s"));
  const dev = [], bound = [], xs = [];
  for (let k = 0; k < flat.length; k += 2) { xs.push(k / 2); dev.push(flat[k]); bound.push(flat[k + 1]); }
  chart($("mx-canvas"), "max |P(t,0) - 1/m| vs bound (log scale)",
    [{ label: "deviation", xs, ys: dev }, { label: "bound", xs, ys: bound }], { logY: true });
});

const drawTraining = guarded("tr-err", () => {
  const ps = $("tr-p").value.split(",").map((s) => Number(s.trim())).filter((p) => p >= 1);
  const acc = [], cons = [];
  for (const p of ps) {
    const flat = trainBlobs(p, num("tr-m"), num("tr-t"), num("tr-s"));
    const xs = [], a = [], c = [];
    for (let k = 0; k < flat.length; k += 2) { xs.push(k / 2 + 1); a.push(flat[k]); c.push(flat[k + 1]); }
    acc.push({ label: `p=${p}`, xs, ys: a });
    cons.push({ label: `p=${p}`, xs, ys: c });
  }
  chart($("tr-acc"), "mean test accuracy", acc);
  chart($("tr-cons"), "consensus distance (log scale)", cons, { logY: true });
});

await init();
for (const id of ["pm-a", "pm-b", "pm-w", "pm-p"]) $(id).addEventListener("input", drawPowerMean);
$("mx-go").addEventListener("click", drawMixing);
$("tr-go").addEventListener("click", drawTraining);
drawPowerMean();
drawMixing();
drawTraining();
