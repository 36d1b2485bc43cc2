import type { ClassName, LabelRecord, PatchPage, SheetSummary } from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number | null = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Typed client for the review service; base URL is configurable so the
 * UI can be served from a different origin than the API. */
export class ReviewApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`network error: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(`${init?.method ?? "GET"} ${path} failed (${response.status})`, response.status);
    }
    return (await response.json()) as T;
  }

  listSheets(): Promise<SheetSummary[]> {
    return this.request<SheetSummary[]>("/sheets");
  }

  listPatches(sheet: string, cls: ClassName, page = 1, pageSize = 50): Promise<PatchPage> {
    const params = new URLSearchParams({
      class: cls,
      page: String(page),
      page_size: String(pageSize),
    });
    return this.request<PatchPage>(`/sheets/${encodeURIComponent(sheet)}/patches?${params}`);
  }

  setLabel(patchId: string, cls: ClassName, present: boolean): Promise<LabelRecord> {
    return this.request<LabelRecord>(
      `/patches/${encodeURIComponent(patchId)}/labels/${cls}`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ present }),
      },
    );
  }

  imageUrl(patchId: string): string {
    return `${this.baseUrl}/patches/${encodeURIComponent(patchId)}/image`;
  }

  overlayUrl(patchId: string, cls: ClassName): string {
    return `${this.baseUrl}/patches/${encodeURIComponent(patchId)}/overlay/${cls}`;
  }

  /** Probe whether an attention overlay exists for the patch. */
  async hasOverlay(patchId: string, cls: ClassName): Promise<boolean> {
    try {
      const response = await this.fetchImpl(this.overlayUrl(patchId, cls), { method: "GET" });
      return response.ok;
    } catch {
      return false;
    }
  }
}
