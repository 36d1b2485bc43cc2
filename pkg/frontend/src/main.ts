import { ReviewApi } from "./api.js";
import { cssColor } from "./colormap.js";
import { GridState } from "./state.js";
import { CLASS_NAMES, type ClassName, type PatchItem, type SheetSummary } from "./types.js";

const api = new ReviewApi(
  new URLSearchParams(window.location.search).get("api") ?? "",
);
const state = new GridState(api);

let sheets: SheetSummary[] = [];
let currentSheet = "";
let currentClass: ClassName = "wood";
let overlayOn = false;
let focusIndex = 0;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderToolbar(root: HTMLElement): void {
  const bar = el("div", "toolbar");

  const sheetSelect = el("select");
  for (const sheet of sheets) {
    const opt = el("option", undefined, `${sheet.sheet} (${sheet.patch_count} patches)`);
    opt.value = sheet.sheet;
    opt.selected = sheet.sheet === currentSheet;
    sheetSelect.appendChild(opt);
  }
  sheetSelect.onchange = () => {
    currentSheet = sheetSelect.value;
    void state.load(currentSheet, currentClass);
  };
  bar.appendChild(sheetSelect);

  for (const cls of CLASS_NAMES) {
    const btn = el("button", cls === currentClass ? "class-btn active" : "class-btn", cls);
    btn.onclick = () => {
      currentClass = cls;
      void state.load(currentSheet, currentClass, state.page, state.pageSize);
    };
    bar.appendChild(btn);
  }

  const overlayBtn = el("button", overlayOn ? "overlay-btn active" : "overlay-btn", "overlay");
  overlayBtn.onclick = () => {
    overlayOn = !overlayOn;
    render();
  };
  bar.appendChild(overlayBtn);

  const pager = el("span", "pager", `page ${state.page}/${state.pageCount}`);
  const prev = el("button", undefined, "<");
  prev.disabled = state.page <= 1;
  prev.onclick = () => void state.load(currentSheet, currentClass, state.page - 1, state.pageSize);
  const next = el("button", undefined, ">");
  next.disabled = state.page >= state.pageCount;
  next.onclick = () => void state.load(currentSheet, currentClass, state.page + 1, state.pageSize);
  bar.append(prev, pager, next);

  const exportLink = el("a", "export", "export labels");
  exportLink.setAttribute("href", "/export/labels");
  bar.appendChild(exportLink);

  root.appendChild(bar);
}

function renderCell(item: PatchItem, index: number): HTMLElement {
  const cell = el("div", "cell");
  cell.tabIndex = 0;
  if (index === focusIndex) cell.classList.add("focused");

  const img = el("img");
  img.src = overlayOn ? api.overlayUrl(item.patch_id, currentClass) : api.imageUrl(item.patch_id);
  img.alt = item.patch_id;
  img.onerror = () => {
    if (overlayOn) img.src = api.imageUrl(item.patch_id); // no overlay for this patch
  };
  cell.appendChild(img);

  const label = item.label;
  const badgeText = label.present === null ? "?" : label.present ? "Yes" : "No";
  const badge = el("span", `badge ${badgeText.toLowerCase()}`, badgeText);
  if (label.present !== null) {
    badge.style.backgroundColor = cssColor(label.present ? 1.0 : 0.0);
  }
  cell.appendChild(badge);
  cell.appendChild(el("span", `source ${label.source ?? "none"}`, label.source ?? ""));
  if (label.reason) cell.title = label.reason;

  const doFlip = () => {
    focusIndex = index;
    void state.flip(item.patch_id);
  };
  cell.onclick = doFlip;
  cell.onkeydown = (event) => {
    if (event.key === " " || event.key === "Enter") {
      event.preventDefault();
      doFlip();
    }
  };
  return cell;
}

function render(): void {
  const root = document.getElementById("app");
  if (!root) return;
  root.textContent = "";

  renderToolbar(root);

  if (state.error) {
    const banner = el("div", "error-banner", state.error);
    const retry = el("button", undefined, "retry");
    retry.onclick = () => void state.load(currentSheet, currentClass, state.page, state.pageSize);
    banner.appendChild(retry);
    root.appendChild(banner);
  }

  if (!state.items.length) {
    root.appendChild(el("div", "empty", "no patches on this sheet"));
    return;
  }

  const cols = Math.max(...state.items.map((item) => item.col)) + 1;
  const grid = el("div", "grid");
  grid.style.gridTemplateColumns = `repeat(${cols}, 1fr)`;
  state.items.forEach((item, index) => grid.appendChild(renderCell(item, index)));
  root.appendChild(grid);
}

function onArrow(event: KeyboardEvent): void {
  const cols = state.items.length
    ? Math.max(...state.items.map((item) => item.col)) + 1
    : 1;
  const steps: Record<string, number> = {
    ArrowLeft: -1,
    ArrowRight: 1,
    ArrowUp: -cols,
    ArrowDown: cols,
  };
  const step = steps[event.key];
  if (step === undefined) return;
  event.preventDefault();
  focusIndex = Math.min(Math.max(focusIndex + step, 0), state.items.length - 1);
  render();
  const cell = document.querySelectorAll<HTMLElement>(".cell")[focusIndex];
  cell?.focus();
}

async function init(): Promise<void> {
  state.subscribe(render);
  document.addEventListener("keydown", onArrow);
  try {
    sheets = await api.listSheets();
  } catch (err) {
    const root = document.getElementById("app");
    if (root) root.textContent = `failed to reach the review service: ${String(err)}`;
    return;
  }
  if (sheets.length) {
    currentSheet = sheets[0].sheet;
    await state.load(currentSheet, currentClass);
  } else {
    render();
  }
}

void init();
