/**
 * Labeling flow: fetch the next query, submit a verdict, advance.
 *
 * A label counts as submitted only after the service acknowledges it.
 * Network failures park the label in a retry buffer that is flushed before
 * anything else is sent; a conflict (someone already labeled it) skips
 * forward with a notice.
 */

import { Api, ApiError, QueryPayload } from "./api";

export interface FlowEvents {
  onQuery(query: QueryPayload | null): void;
  onSubmitted(count: number): void;
  onNotice(text: string): void;
}

interface BufferedLabel {
  queryId: string;
  label: 0 | 1;
}

export class LabelFlow {
  current: QueryPayload | null = null;
  submitted = 0;
  buffer: BufferedLabel[] = [];
  private busy = false;

  constructor(private api: Api, private events: FlowEvents) {}

  async start(): Promise<void> {
    await this.advance();
  }

  async advance(): Promise<void> {
    const res = await this.api.next();
    this.current = res.done ? null : res.query;
    this.events.onQuery(this.current);
  }

  /** Submit a verdict for the displayed query; one in flight at a time. */
  async submit(label: 0 | 1): Promise<void> {
    if (!this.current || this.busy) return;
    this.busy = true;
    const queryId = this.current.query_id;
    try {
      await this.flushBuffer();
      const ack = await this.api.label(queryId, label);
      this.submitted = ack.labeled;
      this.events.onSubmitted(this.submitted);
      await this.advance();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.events.onNotice(`query ${queryId} was already labeled; skipping`);
        await this.advance();
      } else {
        this.buffer.push({ queryId, label });
        this.events.onNotice("network trouble; label buffered for retry");
        return;
      }
    } finally {
      this.busy = false;
    }
  }

  /** Retry buffered labels in order; duplicates just drain out. */
  async flushBuffer(): Promise<void> {
    while (this.buffer.length > 0) {
      const item = this.buffer[0];
      try {
        const ack = await this.api.label(item.queryId, item.label);
        this.submitted = ack.labeled;
        this.events.onSubmitted(this.submitted);
      } catch (err) {
        if (!(err instanceof ApiError && err.status === 409)) {
          throw err;
        }
      }
      this.buffer.shift();
    }
  }

  /** Called after a buffered failure to try again explicitly. */
  async retry(): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    try {
      await this.flushBuffer();
      await this.advance();
    } catch {
      this.events.onNotice("still unreachable; labels remain buffered");
    } finally {
      this.busy = false;
    }
  }
}
