import init, { simulate_process, conditional_trace, forge_levels } from "./pkg/stopforge_web.js";

const $ = (id) => document.getElementById(id);

function guard(errorId, fn) {
  $(errorId).textContent = "";
  try {
    fn();
  } catch (e) {
    $(errorId).textContent = String(e.message ?? e);
  }
}

// Draws each series as a polyline scaled to [0, max] on a shared x axis.
function plot(canvas, series) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const pad = 8;
  ctx.clearRect(0, 0, width, height);
  const n = Math.max(...series.map((s) => s.values.length));
  const x = (i) => pad + (i * (width - 2 * pad)) / Math.max(n - 1, 1);
  for (const s of series) {
    const y = (v) => height - pad - (v / s.max) * (height - 2 * pad);
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.values.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
  }
}

function runSimulate() {
  guard("sim-error", () => {
    const out = JSON.parse(
      simulate_process(BigInt($("sim-seed").value), Number($("sim-len").value), $("sim-coding").value),
    );
    const top = Math.max(...out.states, 1);
    plot($("sim-canvas"), [
      { values: out.states, max: top, color: "#36c" },
      { values: out.truth, max: 1, color: "#c33" },
    ]);
  });
}

function runTrace() {
  guard("tr-error", () => {
    const out = JSON.parse(conditional_trace($("tr-bits").value, $("sim-coding").value, $("tr-pred").value));
    plot($("tr-canvas"), [
      { values: out.truth, max: 1, color: "#c33" },
      { values: out.predicted, max: 1, color: "#393" },
    ]);
    $("tr-info").textContent =
      out.last_reset === null ? "no 001 reset seen" : `last 001 reset at bit ${out.last_reset}`;
  });
}

function runForge() {
  guard("fg-error", () => {
    const out = JSON.parse(
      forge_levels(
        $("fg-pred").value,
        $("fg-rule").value,
        BigInt($("fg-levels").value),
        BigInt($("fg-samples").value),
        BigInt($("fg-seed").value),
      ),
    );
    const cols = ["j", "N", "malicious_bit", "I_side"];
    const probs = ["p_A", "p_B_plus", "p_B_minus", "p_I"];
    const head = [...cols, ...probs, "truth_at_stop"].map((c) => `<th>${c}</th>`).join("");
    const rows = out.levels
      .map((l) => {
        const cells = [
          ...cols.map((c) => l[c]),
          ...probs.map((p) => Number(l[p].est).toFixed(4)),
          Number(l.truth_at_stop).toFixed(2),
        ];
        return `<tr>${cells.map((c) => `<td>${c}</td>`).join("")}</tr>`;
      })
      .join("");
    const exceptions = out.coding.exceptions.map((e) => `${e.state}↦0`).join(", ") || "none";
    $("fg-out").innerHTML = `<table><tr>${head}</tr>${rows}</table><p>zero exceptions: ${exceptions}</p>`;
  });
}

await init();
$("sim-run").onclick = runSimulate;
$("tr-run").onclick = runTrace;
$("fg-run").onclick = runForge;
runSimulate();
runTrace();
