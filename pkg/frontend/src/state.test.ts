import { describe, expect, it, vi } from "vitest";

import type { ReviewApi } from "./api.js";
import { GridState } from "./state.js";
import type { LabelRecord, PatchPage } from "./types.js";

function page(items: Array<{ id: string; present: boolean | null }>): PatchPage {
  return {
    sheet: "sh",
    class: "wood",
    page: 1,
    page_size: 50,
    total: items.length,
    items: items.map(({ id, present }, i) => ({
      patch_id: id,
      row: 0,
      col: i,
      image_url: `/patches/${id}/image`,
      label: { present, source: present === null ? null : "llm", reason: null },
    })),
  };
}

interface MockApi {
  api: ReviewApi;
  setLabel: ReturnType<typeof vi.fn>;
}

function mockApi(
  items: Array<{ id: string; present: boolean | null }>,
  setLabelImpl?: (patchId: string, cls: string, present: boolean) => Promise<LabelRecord>,
): MockApi {
  const setLabel = vi.fn(
    setLabelImpl ??
      (async (patchId: string, cls: string, present: boolean): Promise<LabelRecord> => ({
        patch_id: patchId,
        class: cls,
        present,
        source: "human",
        reason: null,
      })),
  );
  const api = {
    listPatches: vi.fn(async () => page(items)),
    setLabel,
  } as unknown as ReviewApi;
  return { api, setLabel };
}

describe("GridState", () => {
  it("loads a page of patches", async () => {
    const { api } = mockApi([{ id: "sh_0_0", present: true }]);
    const state = new GridState(api);
    await state.load("sh", "wood");
    expect(state.items).toHaveLength(1);
    expect(state.error).toBeNull();
  });

  it("records load failures as a visible error", async () => {
    const api = {
      listPatches: vi.fn(async () => {
        throw new Error("down");
      }),
    } as unknown as ReviewApi;
    const state = new GridState(api);
    await state.load("sh", "wood");
    expect(state.error).toContain("down");
    expect(state.items).toHaveLength(0);
  });

  it("flips optimistically and keeps the server record", async () => {
    const { api, setLabel } = mockApi([{ id: "sh_0_0", present: true }]);
    const state = new GridState(api);
    await state.load("sh", "wood");
    const result = await state.flip("sh_0_0");
    expect(result.ok).toBe(true);
    expect(setLabel).toHaveBeenCalledWith("sh_0_0", "wood", false);
    expect(state.find("sh_0_0")!.label).toMatchObject({ present: false, source: "human" });
  });

  it("applies the optimistic value before the request settles", async () => {
    let resolve!: (record: LabelRecord) => void;
    const { api } = mockApi([{ id: "sh_0_0", present: false }], () =>
      new Promise<LabelRecord>((r) => (resolve = r)),
    );
    const state = new GridState(api);
    await state.load("sh", "wood");
    const done = state.flip("sh_0_0");
    expect(state.find("sh_0_0")!.label.present).toBe(true); // immediate
    resolve({ patch_id: "sh_0_0", class: "wood", present: true, source: "human", reason: null });
    await done;
    expect(state.find("sh_0_0")!.label.present).toBe(true);
  });

  it("rolls back and surfaces the error when the POST fails", async () => {
    const { api } = mockApi([{ id: "sh_0_0", present: true }], async () => {
      throw new Error("offline");
    });
    const state = new GridState(api);
    await state.load("sh", "wood");
    const result = await state.flip("sh_0_0");
    expect(result.ok).toBe(false);
    expect(state.find("sh_0_0")!.label).toMatchObject({ present: true, source: "llm" });
    expect(state.error).toContain("offline");
  });

  it("treats an unlabeled patch as flipping to yes", async () => {
    const { api, setLabel } = mockApi([{ id: "sh_0_0", present: null }]);
    const state = new GridState(api);
    await state.load("sh", "wood");
    await state.flip("sh_0_0");
    expect(setLabel).toHaveBeenCalledWith("sh_0_0", "wood", true);
  });

  it("queues a second click while one is in flight", async () => {
    const resolvers: Array<(record: LabelRecord) => void> = [];
    const { api, setLabel } = mockApi([{ id: "sh_0_0", present: true }], (patchId, cls, present) =>
      new Promise<LabelRecord>((r) =>
        resolvers.push(() =>
          r({ patch_id: patchId, class: cls, present, source: "human", reason: null }),
        ),
      ),
    );
    const state = new GridState(api);
    await state.load("sh", "wood");
    const first = state.flip("sh_0_0"); // true -> false
    const second = state.flip("sh_0_0"); // queued: false -> true
    expect(setLabel).toHaveBeenCalledTimes(1);
    resolvers[0]({} as never);
    await new Promise((r) => setTimeout(r, 0));
    expect(setLabel).toHaveBeenCalledTimes(2); // queued flip sent after the first settles
    resolvers[1]({} as never);
    await first;
    await second;
    expect(setLabel).toHaveBeenLastCalledWith("sh_0_0", "wood", true);
    expect(state.find("sh_0_0")!.label.present).toBe(true);
  });

  it("notifies subscribers on every state change", async () => {
    const { api } = mockApi([{ id: "sh_0_0", present: true }]);
    const state = new GridState(api);
    const listener = vi.fn();
    state.subscribe(listener);
    await state.load("sh", "wood");
    await state.flip("sh_0_0");
    expect(listener.mock.calls.length).toBeGreaterThanOrEqual(3);
  });

  it("computes page count from totals", async () => {
    const { api } = mockApi([{ id: "sh_0_0", present: true }]);
    const state = new GridState(api);
    await state.load("sh", "wood");
    state.total = 25;
    state.pageSize = 20;
    expect(state.pageCount).toBe(2);
  });
});
