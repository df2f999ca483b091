import init, { simulate, check_bounds, preview_correction } from "./pkg/stc_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

function polyline(ctx, xs, ys, color) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(x, ys[i]) : ctx.moveTo(x, ys[i])));
  ctx.stroke();
}

function guard(out, f) {
  try {
    f();
  } catch (e) {
    $(out).textContent = String(e.message ?? e);
  }
}

function drawRollout() {
  guard("r-out", () => {
    const r = simulate(num("r-g"), num("r-b"), num("r-n"), num("r-s"));
    const c = $("r-canvas");
    const ctx = frame(c);
    const b = r.bound;
    const sx = (x) => ((x + b) / (2 * b)) * c.width;
    const sy = (y) => c.height - ((y + b) / (2 * b)) * c.height;
    const p = r.positions();
    const xs = [], ys = [];
    for (let i = 0; i < p.length; i += 2) {
      xs.push(sx(p[i]));
      ys.push(sy(p[i + 1]));
    }
    polyline(ctx, xs, ys, "#36c");
    const [gx, gy] = r.goal();
    ctx.fillStyle = "#d33";
    ctx.fillRect(sx(gx) - 4, sy(gy) - 4, 8, 8);
    ctx.fillStyle = "#222";
    ctx.fillRect(xs[0] - 3, ys[0] - 3, 6, 6);
    const last = p.length - 2;
    $("r-out").textContent =
      `return ${r.total_return.toFixed(1)}   final position (${p[last].toFixed(2)}, ${p[last + 1].toFixed(2)})`;
  });
}

function drawBounds() {
  guard("b-out", () => {
    const which = $("b-which").value;
    const res = check_bounds(which, num("b-n"), num("b-s"));
    const lhs = res.lhs(), rhs = res.rhs();
    const all = [...lhs, ...rhs];
    let lo = Math.min(...all), hi = Math.max(...all);
    if (hi - lo < 1e-12) { lo -= 1; hi += 1; }
    const c = $("b-canvas");
    const ctx = frame(c);
    const s = (v) => ((v - lo) / (hi - lo)) * (c.width - 20) + 10;
    // Points on the safe side of the diagonal satisfy the bound.
    polyline(ctx, [s(lo), s(hi)], [c.height - s(lo), c.height - s(hi)], "#999");
    ctx.fillStyle = "#36c";
    lhs.forEach((l, i) => ctx.fillRect(s(rhs[i]) - 2, c.height - s(l) - 2, 4, 4));
    const side = which === "3" ? "lhs >= rhs" : which === "telescoping" ? "lhs = rhs" : "lhs <= rhs";
    $("b-out").textContent = `x = rhs, y = lhs (${side})   violations ${res.violations} of ${lhs.length}`;
  });
}

function drawPreview() {
  $("p-out").textContent = "training target models...";
  // Let the status line paint before the blocking call.
  setTimeout(() => guard("p-out", () => {
    const p = preview_correction(num("p-g"), num("p-l"), num("p-s"));
    const grid = p.grid();
    const dens = [0, 1, 2].map((k) => p.density(k));
    const top = Math.max(...dens.flat());
    const c = $("p-canvas");
    const ctx = frame(c);
    const x = (v) => ((v - grid[0]) / (grid[grid.length - 1] - grid[0])) * c.width;
    const y = (d) => c.height - 10 - (d / top) * (c.height - 20);
    ["#d33", "#2a7", "#36c"].forEach((col, k) => polyline(ctx, grid.map(x), dens[k].map(y), col));
    const ws = p.w1_source(), wc = p.w1_corrected();
    $("p-out").textContent =
      `acceptance rate ${p.acceptance_rate.toFixed(3)}\n` +
      ws.map((w, d) => `dim ${d}: W1 to target  source ${w.toFixed(4)}  corrected ${wc[d].toFixed(4)}`).join("\n");
  }), 20);
}

await init();
$("r-go").onclick = drawRollout;
$("b-go").onclick = drawBounds;
$("p-go").onclick = drawPreview;
drawRollout();
drawBounds();
