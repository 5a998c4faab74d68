/** Wire types, mirrored field-for-field from the review service JSON. */

export type QueueFilter = "all" | "unreviewed" | "objective-failed";

export type VerdictValue = "pass" | "flag" | "fail";

export interface Verdict {
  scan_id: string;
  verdict: VerdictValue;
  note: string;
  reviewer: string;
  timestamp: string;
}

/** One row of GET /api/scans, untouched. */
export interface ScanSummary {
  scan_id: string;
  sampled: boolean;
  montage: string | null;
  verdict: Verdict | null;
  error: string | null;
  warnings: string[];
  /** null when the service runs in blind-review mode */
  disposition: string | null;
  /** check id -> pass|fail|warn|na; null in blind-review mode */
  statuses: Record<string, string> | null;
}

export interface ScanListPage {
  total: number;
  page: number;
  page_size: number;
  filter: QueueFilter;
  scans: ScanSummary[];
}

export interface FinalizeSummary {
  scans: number;
  reviewed: number;
  failed: number;
}

/** Client view-model: the wire row plus purely local draft state. */
export interface ScanCard {
  summary: ScanSummary;
  noteDraft: string;
  /** a verdict POST for this card is in flight */
  pending: boolean;
}
