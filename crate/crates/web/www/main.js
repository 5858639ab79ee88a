import init, { seedNames, seedText, encodeProgram, runProgram, runCampaign } from "./pkg/tzfuzz_web.js";

const $ = (id) => document.getElementById(id);

function esc(s) {
  return String(s).replace(/[&<>]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;" })[c]);
}

function guard(out, f) {
  try {
    f();
  } catch (e) {
    out.innerHTML = `<p class="err">${esc(e)}</p>`;
  }
}

function showEncoded(r) {
  $("program-out").innerHTML =
    `<p>${r.calls} calls, ${r.bytes} bytes</p><pre>${r.hex.replace(/(.{64})/g, "$1\n")}</pre>`;
}

function showRun(r) {
  const rows = r.calls
    .map((c, i) => `<tr><td>${i}</td><td>${esc(c.name)}</td><td>${c.branches}</td>` +
      `<td>${c.state}</td><td>${c.return_code}</td></tr>`)
    .join("");
  const fault = r.fault ? `<p class="err">fault ${esc(r.bug ?? "")} at ${esc(r.fault)}</p>` : "";
  $("program-out").innerHTML =
    `<p>${r.distinct_states} distinct states</p>${fault}` +
    `<table><tr><th>#</th><th>call</th><th>branches</th><th>state</th><th>return</th></tr>${rows}</table>` +
    `<details><summary>transition tree (DOT)</summary><pre>${esc(r.dot)}</pre></details>`;
}

function drawTimeline(points) {
  const cv = $("chart");
  const ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  if (points.length === 0) return;
  const maxX = points[points.length - 1].execs;
  const series = [["branches", "#1f77b4"], ["states", "#d62728"]];
  series.forEach(([key, colour], k) => {
    const maxY = Math.max(...points.map((p) => p[key]), 1);
    ctx.strokeStyle = colour;
    ctx.beginPath();
    points.forEach((p, i) => {
      const x = 10 + (p.execs / maxX) * (cv.width - 20);
      const y = cv.height - 10 - (p[key] / maxY) * (cv.height - 30);
      i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.stroke();
    ctx.fillStyle = colour;
    ctx.fillText(`${key} (max ${maxY})`, 10 + k * 140, 12);
  });
}

function showCampaign(r) {
  const bugs = r.bugs
    .map((b) => `<tr><td>${b.bug}</td><td>${b.first_exec}</td><td>${esc(b.frames.slice(0, 3).join(" < "))}</td></tr>`)
    .join("");
  $("campaign-out").innerHTML =
    `<p>${r.mode}: ${r.executions} executions, ${r.branches} branches, ${r.states} states, corpus ${r.corpus}</p>` +
    `<table><tr><th>bug</th><th>first exec</th><th>top frames</th></tr>${bugs}</table>`;
  drawTimeline(r.timeline);
}

await init();

const names = JSON.parse(seedNames());
names.forEach((n, i) => $("seed").add(new Option(n, i)));
$("program").value = seedText(0);
$("seed").onchange = () => { $("program").value = seedText(Number($("seed").value)); };

$("encode").onclick = () => guard($("program-out"), () => showEncoded(JSON.parse(encodeProgram($("program").value))));
$("run").onclick = () => guard($("program-out"), () => showRun(JSON.parse(runProgram($("program").value))));
$("fuzz").onclick = () => {
  $("campaign-out").textContent = "running...";
  setTimeout(() => guard($("campaign-out"), () =>
    showCampaign(JSON.parse(runCampaign($("mode").value, Number($("budget").value), Number($("cseed").value))))), 0);
};
