import init, { extract, gate, quantize } from "./pkg/hsas_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);
const esc = (s) => s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
const f3 = (x) => x.toFixed(3);

function guarded(target, fn) {
  try {
    $(target).innerHTML = fn();
  } catch (e) {
    $(target).innerHTML = `<p class="err">${esc(String(e.message ?? e))}</p>`;
  }
}

function highlight(text, hits) {
  let out = esc(text);
  for (const h of new Set(hits)) {
    out = out.replaceAll(esc(h), `<span class="hit">${esc(h)}</span>`);
  }
  return out;
}

function renderExtract() {
  guarded("extract-out", () => {
    const r = JSON.parse(extract($("text").value, $("lang").value, num("budget"), num("ws"), num("wc"), num("wl")));
    const rows = r.sentences
      .map(
        (s) => `<tr class="${s.selected ? "sel" : ""}"><td>${highlight(s.text, s.lexicon_hits)}</td>
          <td class="n">${f3(s.salience)}</td><td class="n">${f3(s.centroid)}</td>
          <td class="n">${f3(s.lexicon)}</td><td class="n"><b>${f3(s.score)}</b></td></tr>`
      )
      .join("");
    return `<table><tr><th>sentence</th><th>salience</th><th>centroid</th><th>lexicon</th><th>score</th></tr>${rows}</table>
      <p>${r.budget} sentence(s) kept:</p><div class="out">${esc(r.summary)}</div>`;
  });
}

function renderGate() {
  guarded("gate-out", () => {
    const r = JSON.parse(gate($("text").value, $("lang").value, num("q"), num("tau"), num("margin")));
    const rows = r.attempts
      .map((a, i) => `<tr><td>${i + 1}</td><td class="n">${f3(a.deletion_quantile)}</td><td class="n">${f3(a.rouge1)}</td><td>${a.verdict}</td></tr>`)
      .join("");
    return `<p>threshold <b>${f3(r.threshold)}</b>${r.low_resource ? " (low-resource language)" : ""}; verdict <b>${r.verdict}</b></p>
      <table><tr><th>attempt</th><th>quantile</th><th>ROUGE-1</th><th>verdict</th></tr>${rows}</table>
      <p>output:</p><div class="out">${esc(r.output)}</div>`;
  });
}

function renderQuant() {
  guarded("quant-out", () => {
    const r = JSON.parse(quantize($("weights").value, parseInt($("bits").value, 10)));
    const rows = r.codes
      .map((c, i) => `<tr><td class="n">${c}</td><td class="n">${r.restored[i].toPrecision(6)}</td></tr>`)
      .join("");
    return `<p>scale ${r.scale.toPrecision(6)} (max code ${r.qmax}); max error ${r.max_error.toPrecision(3)}
      (half a step is ${(r.scale / 2).toPrecision(3)}); ${r.bytes_float} B as f32, ${r.bytes_quantized} B quantized
      <code>${r.packed_hex}</code></p>
      <table><tr><th>code</th><th>restored</th></tr>${rows}</table>`;
  });
}

await init();
for (const id of ["text", "lang", "budget", "ws", "wc", "wl"]) $(id).addEventListener("input", () => { renderExtract(); renderGate(); });
for (const id of ["q", "tau", "margin"]) $(id).addEventListener("input", renderGate);
for (const id of ["weights", "bits"]) $(id).addEventListener("input", renderQuant);
renderExtract();
renderGate();
renderQuant();
