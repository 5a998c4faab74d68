/** DOM wiring: renders the store state and forwards user intent. */

import { httpApi } from "./api.js";
import { ReviewStore } from "./store.js";
import type { QueueFilter, ScanCard } from "./types.js";

const FILTERS: QueueFilter[] = ["unreviewed", "objective-failed", "all"];

const reviewer =
  new URLSearchParams(window.location.search).get("reviewer") ?? "";
const store = new ReviewStore(httpApi(""), reviewer, render);

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

function renderToolbar(): HTMLElement {
  const bar = el("header", "toolbar");

  const filter = el("select", "filter");
  for (const value of FILTERS) {
    const option = el("option", "", value);
    option.value = value;
    option.selected = value === store.state.filter;
    filter.append(option);
  }
  filter.addEventListener("change", () => {
    void store.setFilter(filter.value as QueueFilter);
  });
  bar.append(filter);

  const prev = el("button", "", "< prev");
  prev.disabled = store.state.page <= 1;
  prev.addEventListener("click", () => void store.prevPage());
  const next = el("button", "", "next >");
  next.disabled = store.state.page >= store.pageCount();
  next.addEventListener("click", () => void store.nextPage());
  const where = el(
    "span",
    "page-info",
    `page ${store.state.page}/${store.pageCount()}, ${store.state.total} scans`,
  );
  bar.append(prev, where, next);

  if (store.state.blind) {
    bar.append(el("span", "blind-tag", "blind review"));
  }

  const finalize = el("button", "finalize", "finalize report");
  finalize.addEventListener("click", () => {
    void store.finalize().then((summary) => {
      if (summary) {
        window.alert(
          `report rebuilt: ${summary.scans} scans, ` +
            `${summary.reviewed} reviewed, ${summary.failed} failed`,
        );
      }
    });
  });
  bar.append(finalize);

  const help = el(
    "span",
    "keys",
    "keys: p pass, x flag, f fail, n/arrows move",
  );
  bar.append(help);
  return bar;
}

function renderBadges(card: ScanCard): HTMLElement {
  const row = el("div", "badges");
  const statuses = card.summary.statuses;
  if (statuses === null) {
    return row; // blind review: nothing objective to show
  }
  for (const [check, status] of Object.entries(statuses)) {
    row.append(el("span", `badge badge-${status}`, `${check}: ${status}`));
  }
  if (card.summary.disposition) {
    row.append(
      el(
        "span",
        `badge badge-${card.summary.disposition}`,
        card.summary.disposition,
      ),
    );
  }
  return row;
}

function renderCard(card: ScanCard, index: number): HTMLElement {
  const box = el(
    "article",
    index === store.state.cursor ? "card selected" : "card",
  );
  box.addEventListener("click", () => store.select(index));

  const title = el("h2", "", card.summary.scan_id);
  if (card.summary.sampled) {
    title.append(el("span", "sampled-tag", "sampled"));
  }
  box.append(title);

  if (card.summary.montage) {
    const img = el("img", "montage");
    img.src = card.summary.montage;
    img.alt = `review montage for ${card.summary.scan_id}`;
    img.loading = "lazy";
    box.append(img);
  } else {
    box.append(el("div", "no-montage", "no montage"));
  }

  box.append(renderBadges(card));

  if (card.summary.error) {
    box.append(el("p", "scan-error", card.summary.error));
  }
  for (const warning of card.summary.warnings) {
    box.append(el("p", "scan-warning", warning));
  }

  const verdictRow = el("div", "verdict-row");
  for (const value of ["pass", "flag", "fail"] as const) {
    const active = card.summary.verdict?.verdict === value;
    const button = el(
      "button",
      active ? `verdict verdict-${value} active` : `verdict verdict-${value}`,
      value,
    );
    button.disabled = card.pending;
    button.addEventListener("click", (ev) => {
      ev.stopPropagation();
      store.select(index);
      void store.submit(value);
    });
    verdictRow.append(button);
  }
  box.append(verdictRow);

  const note = el("input", "note");
  note.placeholder = "note";
  note.value = card.noteDraft;
  note.addEventListener("input", () =>
    store.setNoteDraft(card.summary.scan_id, note.value),
  );
  note.addEventListener("click", (ev) => ev.stopPropagation());
  box.append(note);

  if (card.summary.verdict) {
    const v = card.summary.verdict;
    box.append(
      el(
        "p",
        "recorded",
        `recorded: ${v.verdict}${v.note ? ` (${v.note})` : ""}`,
      ),
    );
  }
  return box;
}

function render(): void {
  if (!root) {
    return;
  }
  root.replaceChildren();

  if (store.state.banner) {
    const banner = el("div", "banner", store.state.banner + " ");
    const retry = el("button", "", "retry");
    retry.addEventListener("click", () => void store.load());
    banner.append(retry);
    root.append(banner);
  }

  root.append(renderToolbar());

  if (store.state.loading) {
    root.append(el("p", "status", "loading..."));
    return;
  }
  if (store.state.cards.length === 0) {
    root.append(el("p", "status", "queue is empty"));
    return;
  }

  const grid = el("main", "grid");
  store.state.cards.forEach((card, index) => grid.append(renderCard(card, index)));
  root.append(grid);
}

document.addEventListener("keydown", (event) => {
  const target = event.target;
  if (
    target instanceof HTMLInputElement ||
    target instanceof HTMLTextAreaElement ||
    target instanceof HTMLSelectElement
  ) {
    return;
  }
  if (store.handleKey(event.key)) {
    event.preventDefault();
  }
});

void store.load();
