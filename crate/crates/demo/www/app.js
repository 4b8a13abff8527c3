import init, { selectionScatter, sawaSweep, environmentCurve } from "./pkg/sawa_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(canvas, xs, ys, pad = 40) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (canvas.width - 2 * pad);
  const sy = (y) => canvas.height - pad - ((y - y0) / (y1 - y0 || 1)) * (canvas.height - 2 * pad);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, canvas.width - 2 * pad, canvas.height - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(x0.toPrecision(3), pad, canvas.height - pad + 14);
  ctx.fillText(x1.toPrecision(3), canvas.width - pad - 24, canvas.height - pad + 14);
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, canvas.height - pad);
  return { ctx, sx, sy };
}

function line(ctx, sx, sy, xs, ys, color, dash = []) {
  ctx.strokeStyle = color;
  ctx.setLineDash(dash);
  ctx.lineWidth = 2;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
  ctx.stroke();
  ctx.setLineDash([]);
}

function drawScatter() {
  const res = JSON.parse(selectionScatter(num("sc-r"), num("sc-n"), num("sc-seed")));
  const { ctx, sx, sy } = frame($("sc-canvas"), res.v_b, res.y);
  ctx.fillStyle = "rgba(31,119,180,0.45)";
  res.v_b.forEach((v, i) => ctx.fillRect(sx(v) - 1.5, sy(res.y[i]) - 1.5, 3, 3));
  $("sc-info").textContent = `corr(V, y) = ${res.corr.toFixed(3)} over ${res.y.length} selected samples (x: V, y: outcome)`;
}

function drawSweep() {
  const res = JSON.parse(sawaSweep(num("sw-k"), num("sw-n"), num("sw-rho"), num("sw-seed")));
  const ks = res.points.map((p) => p.k);
  const err = res.points.map((p) => p.beta_error);
  const vb = res.points.map((p) => Math.abs(p.v_b_coef));
  const all = err.concat(vb, [res.ols_beta_error, Math.abs(res.ols_v_b_coef), 0]);
  const { ctx, sx, sy } = frame($("sw-canvas"), ks.length > 1 ? ks : [1, 2], all);
  const ends = [ks[0], ks[ks.length - 1]];
  line(ctx, sx, sy, ends, [res.ols_beta_error, res.ols_beta_error], "#999", [6, 4]);
  line(ctx, sx, sy, ends, [Math.abs(res.ols_v_b_coef), Math.abs(res.ols_v_b_coef)], "#999", [2, 3]);
  line(ctx, sx, sy, ks, err, "#1f77b4");
  line(ctx, sx, sy, ks, vb, "#d62728");
  const last = res.points[res.points.length - 1];
  $("sw-info").textContent =
    `ESS: single ${res.points[0].ess.toFixed(0)}, averaged ${last.ess.toFixed(0)}; ` +
    (last.diversity === null ? "" : `diversity ${last.diversity.toExponential(2)}; `) +
    `mean test RMSE: OLS ${res.ols_mean_rmse.toFixed(3)}, single ${res.points[0].mean_rmse.toFixed(3)}, averaged ${last.mean_rmse.toFixed(3)}`;

  const idx = res.single_weights.map((_, i) => i / (res.single_weights.length - 1));
  const h = frame($("sw-hist"), idx, res.single_weights.concat(res.ensemble_weights));
  line(h.ctx, h.sx, h.sy, idx, res.single_weights, "#ff7f0e");
  line(h.ctx, h.sx, h.sy, idx, res.ensemble_weights, "#2ca02c");
}

function drawCurve() {
  const res = JSON.parse(environmentCurve(num("ec-k"), num("ec-n"), num("ec-seed")));
  const { ctx, sx, sy } = frame($("ec-canvas"), res.r_test, res.ols.concat(res.single, res.ensemble));
  line(ctx, sx, sy, res.r_test, res.ols, "#999");
  line(ctx, sx, sy, res.r_test, res.single, "#ff7f0e");
  line(ctx, sx, sy, res.r_test, res.ensemble, "#2ca02c");
}

function guarded(fn) {
  return () => {
    try {
      $("status").textContent = "";
      fn();
    } catch (e) {
      $("status").textContent = String(e);
    }
  };
}

await init();
$("status").textContent = "";
$("sc-r").addEventListener("input", () => ($("sc-r-out").textContent = $("sc-r").value));
$("sc-go").addEventListener("click", guarded(drawScatter));
$("sw-go").addEventListener("click", guarded(drawSweep));
$("ec-go").addEventListener("click", guarded(drawCurve));
guarded(drawScatter)();
