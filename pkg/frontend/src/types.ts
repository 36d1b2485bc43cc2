export type ClassName = "wood" | "settlement";

export const CLASS_NAMES: ClassName[] = ["wood", "settlement"];

export interface Label {
  present: boolean | null;
  source: "llm" | "human" | null;
  reason: string | null;
}

export interface PatchItem {
  patch_id: string;
  row: number;
  col: number;
  image_url: string;
  label: Label;
}

export interface PatchPage {
  sheet: string;
  class: ClassName;
  page: number;
  page_size: number;
  total: number;
  items: PatchItem[];
}

export interface SheetSummary {
  sheet: string;
  patch_count: number;
  label_count: number;
  coverage: number;
  human_overrides: number;
}

export interface LabelRecord {
  patch_id: string;
  class: string;
  present: boolean;
  source: string;
  reason: string | null;
}
