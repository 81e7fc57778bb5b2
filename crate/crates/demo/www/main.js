import init, { Playground, random_gradient, top_k } from "./pkg/meprop_demo.js";

const $ = (id) => document.getElementById(id);

function drawBars(canvas, values, picked) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const w = width / values.length;
  const mid = height / 2;
  ctx.fillStyle = "#bbb";
  ctx.fillRect(0, mid, width, 1);
  values.forEach((v, i) => {
    ctx.fillStyle = picked.has(i) ? "#d62" : "#9ab";
    const h = v * (mid - 4);
    ctx.fillRect(i * w + 1, h > 0 ? mid - h : mid, Math.max(w - 2, 1), Math.abs(h));
  });
}

let seed = 1;
let grad = [];

function renderTopK() {
  const n = Number($("tk-n").value);
  $("tk-k").max = n;
  const k = Math.min(Number($("tk-k").value), n);
  $("tk-kv").textContent = k;
  if (grad.length !== n) grad = Array.from(random_gradient(n, seed));
  drawBars($("tk-canvas"), grad, new Set(top_k(new Float64Array(grad), k)));
}

let pg = null;
const history = [];

function drawHistory() {
  const ctx = $("tr-canvas").getContext("2d");
  const { width, height } = $("tr-canvas");
  ctx.clearRect(0, 0, width, height);
  if (!history.length) return;
  const step = width / Math.max(history.length, 10);
  ctx.strokeStyle = "#d62";
  ctx.beginPath();
  history.forEach((s, i) => {
    const y = height - s.test_accuracy * (height - 4) - 2;
    i ? ctx.lineTo(i * step + step / 2, y) : ctx.moveTo(step / 2, y);
  });
  ctx.stroke();
}

function drawSizes() {
  const ctx = $("pr-canvas").getContext("2d");
  const { width, height } = $("pr-canvas");
  ctx.clearRect(0, 0, width, height);
  const h0 = Number($("tr-h").value);
  Array.from(pg.hidden_sizes()).forEach((s, l) => {
    ctx.fillStyle = "#ddd";
    ctx.fillRect(0, l * 28 + 4, width - 80, 20);
    ctx.fillStyle = "#9ab";
    ctx.fillRect(0, l * 28 + 4, ((width - 80) * s) / h0, 20);
    ctx.fillStyle = "#222";
    ctx.fillText(`layer ${l}: ${s}`, width - 75, l * 28 + 18);
  });
}

function log(line) {
  $("tr-log").textContent = line + "\n" + $("tr-log").textContent;
}

function reset() {
  const h = Number($("tr-h").value);
  pg = new Playground(h, 7);
  history.length = 0;
  $("tr-k").max = h;
  $("tr-k").value = 0;
  $("tr-kv").textContent = "full";
  $("tr-log").textContent = "";
  drawHistory();
  drawSizes();
}

function setK() {
  const k = Number($("tr-k").value);
  $("tr-kv").textContent = k === 0 ? "full" : k;
  pg.set_k(k);
}

function trainEpoch() {
  const s = JSON.parse(pg.train_epoch());
  history.push(s);
  const ratio = s.backprop_flops / s.full_flops;
  log(`epoch ${s.epoch}  loss ${s.loss.toFixed(4)}  test ${(100 * s.test_accuracy).toFixed(1)}%  backprop flops ${(100 * ratio).toFixed(1)}% of full  sizes ${s.sizes.join("x")}`);
  drawHistory();
  drawSizes();
}

function prune() {
  try {
    const r = JSON.parse(pg.prune(Number($("pr-rate").value)));
    log(`pruned ${r.removed.join("+")} neurons, sizes now ${r.sizes.join("x")}`);
    $("tr-k").max = Math.max(...r.sizes);
  } catch (e) {
    log(`prune failed: ${e.message ?? e}`);
  }
  drawSizes();
}

await init();
$("tk-n").addEventListener("input", renderTopK);
$("tk-k").addEventListener("input", renderTopK);
$("tk-new").addEventListener("click", () => { seed += 1; grad = []; renderTopK(); });
$("tr-reset").addEventListener("click", reset);
$("tr-k").addEventListener("input", setK);
$("tr-epoch").addEventListener("click", trainEpoch);
$("pr-go").addEventListener("click", prune);
renderTopK();
reset();
