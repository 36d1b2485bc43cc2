import type { ReviewApi } from "./api.js";
import type { ClassName, PatchItem } from "./types.js";

export interface FlipResult {
  patchId: string;
  ok: boolean;
  error?: string;
}

export type StateListener = () => void;

/** Client-side grid state for one (sheet, class) view.
 *
 * Flips are optimistic: the badge changes immediately and rolls back if
 * the POST fails. At most one mutation per patch is in flight; further
 * clicks on the same patch while one is pending are queued as a single
 * trailing flip (so a double click settles on the double-flipped state).
 */
export class GridState {
  items: PatchItem[] = [];
  sheet = "";
  cls: ClassName = "wood";
  page = 1;
  pageSize = 50;
  total = 0;
  error: string | null = null;

  private pending = new Map<string, boolean>(); // patch -> queued target value
  private inFlight = new Set<string>();
  private listeners: StateListener[] = [];

  constructor(private readonly api: ReviewApi) {}

  subscribe(listener: StateListener): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  async load(sheet: string, cls: ClassName, page = 1, pageSize = 50): Promise<void> {
    try {
      const body = await this.api.listPatches(sheet, cls, page, pageSize);
      this.sheet = body.sheet;
      this.cls = body.class;
      this.page = body.page;
      this.pageSize = body.page_size;
      this.total = body.total;
      this.items = body.items;
      this.error = null;
    } catch (err) {
      this.error = String(err);
    }
    this.notify();
  }

  find(patchId: string): PatchItem | undefined {
    return this.items.find((item) => item.patch_id === patchId);
  }

  /** Toggle a patch's label; resolves when the write (or rollback) settled. */
  async flip(patchId: string): Promise<FlipResult> {
    const item = this.find(patchId);
    if (!item) return { patchId, ok: false, error: "unknown patch" };
    const target = !(item.label.present ?? false);
    if (this.inFlight.has(patchId)) {
      this.pending.set(patchId, target);
      // optimistic update for the queued value too
      item.label = { present: target, source: "human", reason: null };
      this.notify();
      return { patchId, ok: true };
    }
    return this.send(patchId, target);
  }

  private async send(patchId: string, target: boolean): Promise<FlipResult> {
    const item = this.find(patchId);
    if (!item) return { patchId, ok: false, error: "unknown patch" };
    const previous = { ...item.label };
    item.label = { present: target, source: "human", reason: null };
    this.inFlight.add(patchId);
    this.notify();
    let result: FlipResult;
    try {
      const record = await this.api.setLabel(patchId, this.cls, target);
      item.label = {
        present: record.present,
        source: record.source as "human",
        reason: record.reason,
      };
      this.error = null;
      result = { patchId, ok: true };
    } catch (err) {
      item.label = previous; // roll back the optimistic change
      this.error = `label update failed: ${String(err)}`;
      result = { patchId, ok: false, error: String(err) };
    }
    this.inFlight.delete(patchId);
    this.notify();
    const queued = this.pending.get(patchId);
    this.pending.delete(patchId);
    if (queued !== undefined && queued !== item.label.present) {
      return this.send(patchId, queued);
    }
    return result;
  }

  get pageCount(): number {
    return Math.max(1, Math.ceil(this.total / this.pageSize));
  }
}
