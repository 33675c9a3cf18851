import init, { limit_cdf_curve, simulate_and_estimate, kmax_profile } from "./pkg/sucpr_wasm.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// Line plot of several series on a shared box; `hline` draws a dashed reference.
function plot(canvas, series, { hline, vline } = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y).concat(hline ?? []);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const pad = 30;
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - y0) / (y1 - y0 || 1)) * (h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.fillText(y1.toPrecision(3), 2, pad);
  ctx.fillText(y0.toPrecision(3), 2, h - pad);
  ctx.fillText(x0.toPrecision(3), pad, h - 8);
  ctx.fillText(x1.toPrecision(3), w - pad - 20, h - 8);
  const dashed = (f) => { ctx.save(); ctx.setLineDash([4, 4]); ctx.strokeStyle = "#999"; ctx.beginPath(); f(); ctx.stroke(); ctx.restore(); };
  if (hline !== undefined) dashed(() => { ctx.moveTo(pad, sy(hline)); ctx.lineTo(w - pad, sy(hline)); });
  if (vline !== undefined) dashed(() => { ctx.moveTo(sx(vline), pad); ctx.lineTo(sx(vline), h - pad); });
  series.forEach((s, k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.beginPath();
    s.x.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(s.y[i])) : ctx.moveTo(sx(x), sy(s.y[i]))));
    ctx.stroke();
  });
}

function guarded(out, f) {
  try {
    f();
  } catch (e) {
    $(out).innerHTML = `<p class="err">${e.message ?? e}</p>`;
  }
}

function table(head, rows) {
  const tr = (cells, tag) => `<tr>${cells.map((c) => `<${tag}>${c}</${tag}>`).join("")}</tr>`;
  return `<table>${tr(head, "th")}${rows.map((r) => tr(r, "td")).join("")}</table>`;
}

function runCdf() {
  guarded("cdf-out", () => {
    const r = JSON.parse(limit_cdf_curve(num("cdf-n"), num("cdf-x"), 200));
    $("cdf-out").innerHTML = `<p>5% critical value for n = ${r.n}: <b>${r.critical_5.toFixed(4)}</b></p>`;
    plot($("cdf-plot"), [{ x: r.x, y: r.cdf }], { hline: 0.95, vline: r.critical_5 });
  });
}

function runEstimate() {
  guarded("est-out", () => {
    const r = JSON.parse(simulate_and_estimate($("est-setting").value, num("est-n"), num("est-t"), num("est-p"), BigInt(num("est-seed"))));
    const rows = r.methods.map((m) => [m.method, ...m.beta4.map((b) => b.toFixed(4)), (m.beta4[0] - r.truth).toExponential(2)]);
    const head = ["method", ...r.methods[0].beta4.map((_, i) => `&beta;<sub>${i + 1},4</sub>`), "error (unit 1)"];
    $("est-out").innerHTML = `<p>true &beta;<sub>4</sub> = ${r.truth}</p>` + table(head, rows);
    const t = r.y1.map((_, i) => i + 1);
    plot($("est-plot"), [{ x: t, y: r.y1 }, { x: t, y: r.x1 }]);
  });
}

function runProfile() {
  guarded("kp-out", () => {
    const r = JSON.parse(kmax_profile($("kp-setting").value, num("kp-n"), num("kp-t"), num("kp-j"), BigInt(num("kp-seed"))));
    const rows = r.map((v) => [v.variant, v.block_size, v.k_max.toFixed(3), v.critical_value.toFixed(3), v.reject ? "reject" : "accept"]);
    $("kp-out").innerHTML = table(["test", "block", "K_max", "critical", "decision"], rows) +
      `<p>Lines: ${r.map((v, k) => `<span style="color:${COLORS[k]}">${v.variant}</span>`).join(", ")}</p>`;
    plot($("kp-plot"), r.map((v) => ({ x: v.profile.map((p) => p[0]), y: v.profile.map((p) => p[1]) })));
  });
}

await init();
$("cdf-run").onclick = runCdf;
$("est-run").onclick = runEstimate;
$("kp-run").onclick = runProfile;
runCdf();
