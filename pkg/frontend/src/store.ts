/** Review queue state machine, free of DOM so it is testable headless.
 *
 * The store never computes QA logic: cards display server fields
 * verbatim, and the only mutation it performs is submitting verdicts.
 * Submissions update the card optimistically and roll back on any
 * non-2xx answer; a 409 additionally refreshes the whole list, since it
 * means the server state moved under us.
 */

import { ApiError } from "./api.js";
import type { ReviewApi, VerdictRequest } from "./api.js";
import type {
  FinalizeSummary,
  QueueFilter,
  ScanCard,
  VerdictValue,
} from "./types.js";

export interface StoreState {
  cards: ScanCard[];
  total: number;
  page: number;
  pageSize: number;
  filter: QueueFilter;
  /** index of the keyboard-selected card */
  cursor: number;
  /** failure banner text; null when healthy */
  banner: string | null;
  /** true when the service hides objective results */
  blind: boolean;
  loading: boolean;
}

const KEY_ACTIONS: Record<string, VerdictValue | "next" | "prev"> = {
  p: "pass",
  f: "fail",
  x: "flag",
  n: "next",
  j: "next",
  ArrowRight: "next",
  k: "prev",
  ArrowLeft: "prev",
};

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `request failed (${err.status}): ${err.message}`;
  }
  return "network failure; is the review service still running?";
}

export class ReviewStore {
  readonly state: StoreState = {
    cards: [],
    total: 0,
    page: 1,
    pageSize: 24,
    filter: "unreviewed",
    cursor: 0,
    banner: null,
    blind: false,
    loading: false,
  };

  constructor(
    private readonly api: ReviewApi,
    private readonly reviewer = "",
    private readonly onChange: () => void = () => {},
  ) {}

  private emit(): void {
    this.onChange();
  }

  private clampCursor(): void {
    const last = Math.max(0, this.state.cards.length - 1);
    this.state.cursor = Math.max(0, Math.min(this.state.cursor, last));
  }

  current(): ScanCard | null {
    return this.state.cards[this.state.cursor] ?? null;
  }

  pageCount(): number {
    return Math.max(1, Math.ceil(this.state.total / this.state.pageSize));
  }

  async load(): Promise<void> {
    this.state.loading = true;
    this.emit();
    try {
      const page = await this.api.fetchScans(
        this.state.page,
        this.state.pageSize,
        this.state.filter,
      );
      this.state.cards = page.scans.map((summary) => ({
        summary,
        noteDraft: "",
        pending: false,
      }));
      this.state.total = page.total;
      this.state.blind =
        page.scans.length > 0 && page.scans.every((s) => s.statuses === null);
      this.state.banner = null;
      this.clampCursor();
    } catch (err) {
      this.state.banner = describe(err);
    } finally {
      this.state.loading = false;
      this.emit();
    }
  }

  async setFilter(filter: QueueFilter): Promise<void> {
    this.state.filter = filter;
    this.state.page = 1;
    this.state.cursor = 0;
    await this.load();
  }

  async nextPage(): Promise<void> {
    if (this.state.page >= this.pageCount()) {
      return;
    }
    this.state.page += 1;
    this.state.cursor = 0;
    await this.load();
  }

  async prevPage(): Promise<void> {
    if (this.state.page <= 1) {
      return;
    }
    this.state.page -= 1;
    this.state.cursor = 0;
    await this.load();
  }

  select(index: number): void {
    this.state.cursor = index;
    this.clampCursor();
    this.emit();
  }

  move(delta: number): void {
    this.select(this.state.cursor + delta);
  }

  /** Update the note draft for a card without triggering a render. */
  setNoteDraft(scanId: string, text: string): void {
    const card = this.state.cards.find((c) => c.summary.scan_id === scanId);
    if (card) {
      card.noteDraft = text;
    }
  }

  async submit(value: VerdictValue): Promise<void> {
    const card = this.current();
    if (!card || card.pending) {
      return;
    }
    const summary = card.summary;
    const previous = summary.verdict;
    const request: VerdictRequest = {
      scan_id: summary.scan_id,
      verdict: value,
      note: card.noteDraft,
      reviewer: this.reviewer,
    };

    summary.verdict = {
      scan_id: summary.scan_id,
      verdict: value,
      note: card.noteDraft,
      reviewer: this.reviewer,
      timestamp: "",
    };
    card.pending = true;
    this.state.banner = null;
    this.emit();

    try {
      const recorded = await this.api.submitVerdict(request);
      summary.verdict = recorded;
      card.pending = false;
      if (this.state.filter === "unreviewed") {
        // the card no longer matches the queue; drop it in place
        const index = this.state.cards.indexOf(card);
        if (index >= 0) {
          this.state.cards.splice(index, 1);
          this.state.total = Math.max(0, this.state.total - 1);
        }
        this.clampCursor();
      } else {
        this.move(1);
      }
      this.emit();
    } catch (err) {
      summary.verdict = previous;
      card.pending = false;
      if (err instanceof ApiError && err.status === 409) {
        // the server state moved under us; refresh before complaining
        await this.load();
      }
      this.state.banner = describe(err);
      this.emit();
    }
  }

  async finalize(): Promise<FinalizeSummary | null> {
    try {
      const summary = await this.api.finalize();
      this.state.banner = null;
      await this.load();
      return summary;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        await this.load();
      }
      this.state.banner = describe(err);
      this.emit();
      return null;
    }
  }

  /** Returns true when the key was consumed. */
  handleKey(key: string): boolean {
    const action = KEY_ACTIONS[key];
    if (!action) {
      return false;
    }
    if (action === "next") {
      this.move(1);
    } else if (action === "prev") {
      this.move(-1);
    } else {
      void this.submit(action);
    }
    return true;
  }
}
