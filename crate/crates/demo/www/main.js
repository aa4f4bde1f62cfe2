import init, { simulate_scene, flip_sweep, vote } from "./pkg/beltrack_demo.js";

const $ = (id) => document.getElementById(id);
const NAMES = ["fresh", "bruise_defect", "rot_defect", "scab_defect"];

function formValues(id) {
  const out = {};
  for (const el of $(id).querySelectorAll("input, select")) {
    if (!el.name) continue;
    out[el.name] = el.type === "number" ? Number(el.value) : el.value;
  }
  return out;
}

function showError(target, err) {
  target.textContent = String(err.message ?? err);
  target.classList.add("error");
}

// Scene playback

let scene = null;
let timer = null;

function drawFrame(i) {
  const canvas = $("scene");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!scene) return;
  const s = Math.min(canvas.width / scene.width, canvas.height / scene.height);
  const frame = scene.frames[i];
  $("scene-frame-label").textContent = `${frame.frame} / ${scene.frames.length - 1}`;

  ctx.fillStyle = "#eee";
  ctx.fillRect(0, 0, scene.width * s, scene.height * s);
  ctx.strokeStyle = "#999";
  ctx.setLineDash([4, 3]);
  for (const [x, y, w, h] of frame.detections) ctx.strokeRect(x * s, y * s, w * s, h * s);
  ctx.setLineDash([]);
  ctx.lineWidth = 2;
  ctx.font = "12px system-ui";
  for (const t of frame.tracks) {
    const [x, y, w, h] = t.bbox;
    const defect = t.running !== null && t.running !== 0;
    ctx.strokeStyle = defect ? "#d33" : "#2a8";
    ctx.strokeRect(x * s, y * s, w * s, h * s);
    ctx.fillStyle = ctx.strokeStyle;
    const seen = t.observed === null ? "-" : NAMES[t.observed][0];
    const voted = t.running === null ? "?" : NAMES[t.running];
    ctx.fillText(`#${t.id} ${seen} > ${voted}`, x * s + 2, y * s - 4);
  }
  ctx.lineWidth = 1;
}

function runScene() {
  stop();
  const out = $("scene-summary");
  out.classList.remove("error");
  try {
    scene = JSON.parse(simulate_scene(JSON.stringify(formValues("scene-form"))));
  } catch (err) {
    scene = null;
    drawFrame(0);
    showError(out, err);
    return;
  }
  const slider = $("scene-frame");
  slider.max = scene.frames.length - 1;
  slider.value = 0;
  $("scene-play").disabled = false;
  drawFrame(0);
  const e = scene.evaluation;
  const f = (v) => (v === null || v === undefined ? "n/a" : v.toFixed(3));
  out.textContent = [
    `${scene.verdicts.length} tracks for ${e.n_objects} objects, ${e.id_switches} id switches, detection AP ${f(e.detection_ap)}`,
    `voted accuracy ${f(e.aggregated?.accuracy)}, last-frame accuracy ${f(e.frame_wise?.accuracy)}`,
    `mean stability: voted ${f(scene.summary.aggregated?.mean_stability)}, per frame ${f(scene.summary.frame_wise?.mean_stability)}`,
  ].join("\n");
}

function stop() {
  if (timer !== null) clearInterval(timer);
  timer = null;
  $("scene-play").textContent = "Play";
}

function togglePlay() {
  if (timer !== null) return stop();
  const slider = $("scene-frame");
  $("scene-play").textContent = "Pause";
  timer = setInterval(() => {
    const next = (Number(slider.value) + 1) % scene.frames.length;
    slider.value = next;
    drawFrame(next);
  }, 60);
}

// Flip-rate sweep

const SERIES = [
  ["aggregated_accuracy", "voted accuracy", "#2a8", false],
  ["last_frame_accuracy", "last-frame accuracy", "#d33", false],
  ["binomial_majority", "binomial majority", "#2a8", true],
  ["frame_wise_stability", "per-frame stability", "#36c", false],
  ["expected_stability", "expected stability", "#36c", true],
];

function drawSweep(points) {
  const canvas = $("sweep");
  const ctx = canvas.getContext("2d");
  const pad = 40;
  const W = canvas.width - 2 * pad;
  const H = canvas.height - 2 * pad;
  const qMax = points[points.length - 1].q || 1;
  const X = (q) => pad + (q / qMax) * W;
  const Y = (v) => pad + (1 - v) * H;
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  ctx.strokeStyle = "#ccc";
  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  for (let v = 0; v <= 1.0001; v += 0.25) {
    ctx.beginPath();
    ctx.moveTo(pad, Y(v));
    ctx.lineTo(pad + W, Y(v));
    ctx.stroke();
    ctx.fillText(v.toFixed(2), 4, Y(v) + 4);
  }
  for (const p of points) ctx.fillText(p.q.toFixed(2), X(p.q) - 10, pad + H + 16);

  for (const [key, , color, dashed] of SERIES) {
    ctx.strokeStyle = color;
    ctx.setLineDash(dashed ? [6, 4] : []);
    ctx.lineWidth = 2;
    ctx.beginPath();
    points.forEach((p, i) => (i ? ctx.lineTo(X(p.q), Y(p[key])) : ctx.moveTo(X(p.q), Y(p[key]))));
    ctx.stroke();
  }
  ctx.setLineDash([]);
  ctx.lineWidth = 1;

  $("sweep-legend").innerHTML = SERIES.map(
    ([, label, color, dashed]) =>
      `<span><i class="sw" style="background:${color};${dashed ? "opacity:.5" : ""}"></i>${label}${dashed ? " (analytic)" : ""}</span>`,
  ).join("");
  const head = "<tr><th>q</th>" + SERIES.map(([, label]) => `<th>${label}</th>`).join("") + "</tr>";
  const rows = points
    .map((p) => `<tr><td>${p.q.toFixed(2)}</td>` + SERIES.map(([k]) => `<td>${p[k].toFixed(3)}</td>`).join("") + "</tr>")
    .join("");
  $("sweep-table").innerHTML = head + rows;
}

function runSweep() {
  const table = $("sweep-table");
  try {
    drawSweep(JSON.parse(flip_sweep(JSON.stringify(formValues("sweep-form")))));
  } catch (err) {
    table.innerHTML = `<tr><td class="error">${err.message ?? err}</td></tr>`;
  }
}

// Vote calculator

function runVote() {
  const out = $("vote-out");
  out.classList.remove("error");
  const v = formValues("vote-form");
  let r;
  try {
    r = JSON.parse(vote(v.labels, v.tie_break, v.vote_order));
  } catch (err) {
    return showError(out, err);
  }
  out.textContent = [
    `verdict: ${r.name} (${r.binary})`,
    `votes: ${r.votes.map((n, i) => `${NAMES[i]} ${n}`).join(", ")}`,
    `binary stability ${r.stability_binary.toFixed(3)} with ${r.label_changes} changes, category stability ${r.stability_category.toFixed(3)}`,
    "",
    "step  label          running majority",
    ...r.steps.map((s, i) => `${String(i + 1).padStart(4)}  ${NAMES[s.label].padEnd(14)} ${s.running_name}`),
  ].join("\n");
}

await init();
$("scene-run").addEventListener("click", runScene);
$("scene-play").addEventListener("click", togglePlay);
$("scene-frame").addEventListener("input", (e) => {
  stop();
  drawFrame(Number(e.target.value));
});
$("sweep-run").addEventListener("click", runSweep);
$("vote-run").addEventListener("click", runVote);
runScene();
runVote();
