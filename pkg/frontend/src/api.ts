/** Typed client for the tutoring session service (HTTP+JSON). */

export interface TreeNodeDoc {
  id: string;
  name: string;
  parent: string | null;
}

export interface TreeDoc {
  id: string;
  root: string;
  nodes: TreeNodeDoc[];
}

export interface HistoryRecord {
  kc: string;
  correct: boolean;
  difficulty?: string;
}

export interface StateSnapshot {
  session_id: string;
  tree: string;
  params: string;
  mastery: Record<string, number>;
  total_mastery: number;
  history: HistoryRecord[];
  updated_at: string;
}

export interface GeneratedQuestion {
  intended_kc: string | null;
  question_text: string;
}

export interface Recommendation {
  session_id: string;
  kc: string;
  kc_name: string;
  education_value: number;
  baseline: number;
  mastery_rank: number;
  values: Record<string, number>;
  mastery: Record<string, number>;
  question: GeneratedQuestion | null;
}

export interface ApiErrorBody {
  error: { code: string; message: string };
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  const body = await response.json().catch(() => null);
  if (!response.ok) {
    const err = (body as ApiErrorBody | null)?.error;
    throw new ApiError(
      response.status,
      err?.code ?? 'http_error',
      err?.message ?? `request failed with status ${response.status}`,
    );
  }
  return body as T;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  async health(): Promise<{ status: string }> {
    return asJson(await this.fetchImpl(this.url('/healthz')));
  }

  async tree(treeId: string): Promise<TreeDoc> {
    return asJson(await this.fetchImpl(this.url(`/trees/${encodeURIComponent(treeId)}`)));
  }

  async createSession(
    treeId: string,
    paramsId: string,
    history?: HistoryRecord[],
  ): Promise<{ session_id: string }> {
    return asJson(
      await this.fetchImpl(this.url('/sessions'), {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ tree: treeId, params: paramsId, history: history ?? null }),
      }),
    );
  }

  async state(sessionId: string): Promise<StateSnapshot> {
    return asJson(
      await this.fetchImpl(this.url(`/sessions/${encodeURIComponent(sessionId)}/state`)),
    );
  }

  async recommendation(sessionId: string): Promise<Recommendation> {
    return asJson(
      await this.fetchImpl(
        this.url(`/sessions/${encodeURIComponent(sessionId)}/recommendation`),
      ),
    );
  }

  async submitAnswer(
    sessionId: string,
    kc: string,
    correct: boolean,
  ): Promise<StateSnapshot> {
    return asJson(
      await this.fetchImpl(this.url(`/sessions/${encodeURIComponent(sessionId)}/answers`), {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ kc, correct }),
      }),
    );
  }
}
