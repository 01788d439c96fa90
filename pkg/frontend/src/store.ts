/**
 * Session state machine for the tutor view.
 *
 * All math stays server-side: the store only echoes server payloads. One
 * mutation may be in flight at a time (rapid double-clicks collapse into a
 * single answer), and a request epoch discards stale responses when reads
 * overlap. A failed request leaves the previous view intact apart from the
 * error banner.
 */

import {
  ApiClient,
  HistoryRecord,
  Recommendation,
  StateSnapshot,
  TreeDoc,
} from './api.js';

export interface AnswerLogEntry {
  kc: string;
  kcName: string;
  correct: boolean;
  totalMasteryAfter: number;
}

export interface SessionView {
  sessionId: string | null;
  tree: TreeDoc | null;
  mastery: Record<string, number>;
  totalMastery: number;
  recommendation: Recommendation | null;
  answerLog: AnswerLogEntry[];
  busy: boolean;
  error: string | null;
}

export interface WhatIfOverlay {
  kc: string;
  kcName: string;
  value: number;
  headlineKc: string;
  headlineValue: number;
}

type Listener = (view: SessionView) => void;

const EMPTY_VIEW: SessionView = {
  sessionId: null,
  tree: null,
  mastery: {},
  totalMastery: 0,
  recommendation: null,
  answerLog: [],
  busy: false,
  error: null,
};

export class SessionStore {
  private view: SessionView = { ...EMPTY_VIEW };
  private listeners: Listener[] = [];
  private epoch = 0;
  private mutationInFlight = false;
  /** Observable count of recommendation fetches (one per answer plus the
   * initial one); exercised by the end-to-end test. */
  recommendationFetches = 0;

  constructor(private readonly api: ApiClient) {}

  snapshot(): SessionView {
    return {
      ...this.view,
      mastery: { ...this.view.mastery },
      answerLog: [...this.view.answerLog],
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(patch: Partial<SessionView>): void {
    this.view = { ...this.view, ...patch };
    for (const listener of this.listeners) listener(this.snapshot());
  }

  private async fetchRecommendation(sessionId: string): Promise<Recommendation> {
    this.recommendationFetches += 1;
    return this.api.recommendation(sessionId);
  }

  /** Create a session (optionally seeded) and load tree, state, and the
   * first recommendation. */
  async start(treeId: string, paramsId: string, history?: HistoryRecord[]): Promise<void> {
    const epoch = ++this.epoch;
    this.emit({ ...EMPTY_VIEW, busy: true });
    try {
      const tree = await this.api.tree(treeId);
      const { session_id } = await this.api.createSession(treeId, paramsId, history);
      const state = await this.api.state(session_id);
      const recommendation = await this.fetchRecommendation(session_id);
      if (epoch !== this.epoch) return; // superseded by a newer start
      this.emit({
        sessionId: session_id,
        tree,
        mastery: state.mastery,
        totalMastery: state.total_mastery,
        recommendation,
        answerLog: [],
        busy: false,
        error: null,
      });
    } catch (err) {
      if (epoch !== this.epoch) return;
      this.emit({ busy: false, error: describe(err) });
    }
  }

  /** Answer the currently recommended concept. Exactly one answer is
   * recorded per user intent: re-entrant calls while a mutation is in
   * flight are dropped. */
  async submitAnswer(correct: boolean): Promise<void> {
    const { sessionId, recommendation } = this.view;
    if (!sessionId || !recommendation || this.mutationInFlight) return;
    this.mutationInFlight = true;
    const epoch = ++this.epoch;
    this.emit({ busy: true, error: null });
    try {
      const kc = recommendation.kc;
      const snapshot = await this.api.submitAnswer(sessionId, kc, correct);
      const next = await this.fetchRecommendation(sessionId);
      if (epoch !== this.epoch) return;
      this.emit({
        mastery: snapshot.mastery,
        totalMastery: snapshot.total_mastery,
        recommendation: next,
        answerLog: [
          ...this.view.answerLog,
          {
            kc,
            kcName: recommendation.kc_name,
            correct,
            totalMasteryAfter: snapshot.total_mastery,
          },
        ],
        busy: false,
      });
    } catch (err) {
      if (epoch === this.epoch) this.emit({ busy: false, error: describe(err) });
    } finally {
      this.mutationInFlight = false;
    }
  }

  /** Re-read state from the server; a refresh reproduces the same view. */
  async resync(): Promise<void> {
    const { sessionId } = this.view;
    if (!sessionId) return;
    const epoch = this.epoch;
    try {
      const state = await this.api.state(sessionId);
      if (epoch !== this.epoch) return;
      this.emit({ mastery: state.mastery, totalMastery: state.total_mastery, error: null });
    } catch (err) {
      if (epoch === this.epoch) this.emit({ error: describe(err) });
    }
  }

  /** Education value of any candidate against the recommended one, straight
   * from the recommendation payload; never touches the server. */
  whatIf(kc: string): WhatIfOverlay | null {
    const rec = this.view.recommendation;
    if (!rec || !(kc in rec.values)) return null;
    const node = this.view.tree?.nodes.find((n) => n.id === kc);
    return {
      kc,
      kcName: node?.name ?? kc,
      value: rec.values[kc]!,
      headlineKc: rec.kc,
      headlineValue: rec.education_value,
    };
  }
}

function describe(err: unknown): string {
  if (err instanceof Error) return err.message;
  return String(err);
}
