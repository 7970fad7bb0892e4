import type {
  LabelSubmission,
  RepairDetailDoc,
  RepairDoc,
  SceneDoc,
  TaskDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

async function errorDetail(response: Response): Promise<string> {
  try {
    const doc = await response.json();
    if (doc && typeof doc.detail === "string") return doc.detail;
    return JSON.stringify(doc);
  } catch {
    return response.statusText || `HTTP ${response.status}`;
  }
}

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    readonly baseUrl: string = "",
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<Response> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return response;
  }

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    return (await this.request(method, path, body)).json() as Promise<T>;
  }

  async health(): Promise<{ status: string; required_approvals: number }> {
    return this.json("GET", "/health");
  }

  /** Lease the next task this reviewer can act on; null when the queue is empty. */
  async nextTask(reviewer: string): Promise<TaskDoc | null> {
    const response = await this.request(
      "GET",
      `/tasks/next?reviewer=${encodeURIComponent(reviewer)}`,
    );
    if (response.status === 204) return null;
    return response.json() as Promise<TaskDoc>;
  }

  async listTasks(state?: string): Promise<TaskDoc[]> {
    const query = state ? `?state=${encodeURIComponent(state)}` : "";
    const doc = await this.json<{ tasks: TaskDoc[] }>("GET", `/tasks${query}`);
    return doc.tasks;
  }

  async getTask(taskId: string): Promise<TaskDoc> {
    return this.json("GET", `/tasks/${encodeURIComponent(taskId)}`);
  }

  async getFrame(taskId: string): Promise<SceneDoc> {
    return this.json("GET", `/tasks/${encodeURIComponent(taskId)}/frame`);
  }

  async submitLabel(taskId: string, submission: LabelSubmission): Promise<TaskDoc> {
    return this.json("POST", `/tasks/${encodeURIComponent(taskId)}/label`, submission);
  }

  async submitReview(
    taskId: string,
    reviewer: string,
    verdict: "approve" | "reject",
  ): Promise<TaskDoc> {
    return this.json("POST", `/tasks/${encodeURIComponent(taskId)}/review`, {
      reviewer,
      verdict,
    });
  }

  async listRepairs(): Promise<RepairDoc[]> {
    const doc = await this.json<{ repairs: RepairDoc[] }>("GET", "/repairs");
    return doc.repairs;
  }

  async getRepair(repairId: string): Promise<RepairDetailDoc> {
    return this.json("GET", `/repairs/${encodeURIComponent(repairId)}`);
  }

  async repairVerdict(
    repairId: string,
    reviewer: string,
    verdict: "approve" | "reject",
  ): Promise<RepairDoc> {
    return this.json("POST", `/repairs/${encodeURIComponent(repairId)}/verdict`, {
      reviewer,
      verdict,
    });
  }

  async exportJsonl(): Promise<string> {
    return (await this.request("GET", "/export")).text();
  }
}
