// Wire types for the annotation service. Field names mirror the server
// documents exactly; anything added here would be silently dropped on POST.

export const KINDS = ["absent", "redundant"] as const;
export const PARTS = ["head", "ear", "hand", "arm", "leg", "foot"] as const;

export type AbnormalityKind = (typeof KINDS)[number];
export type BodyPart = (typeof PARTS)[number];

export interface LabelDoc {
  kind: AbnormalityKind;
  part: BodyPart;
}

// Kind-major, the service's canonical ordering.
export const ALL_LABELS: readonly LabelDoc[] = KINDS.flatMap((kind) =>
  PARTS.map((part) => ({ kind, part })),
);

export const FILTER_REASONS = [
  "non_realistic_style",
  "too_low_quality",
  "abnormality_not_objective",
  "nsfw",
] as const;

export type FilterReason = (typeof FILTER_REASONS)[number];

export const FILTER_CAPTIONS: Record<FilterReason, string> = {
  non_realistic_style: "Non-realistic style",
  too_low_quality: "Too low quality",
  abnormality_not_objective: "Abnormality not objective",
  nsfw: "NSFW",
};

export function labelKey(label: LabelDoc): string {
  return `${label.kind}:${label.part}`;
}

// One hotkey per label: digits for absent parts, the qwerty row for
// redundant parts, both in part order.
const REDUNDANT_KEYS = ["q", "w", "e", "r", "t", "y"] as const;

export const LABEL_HOTKEYS: ReadonlyMap<string, LabelDoc> = new Map(
  ALL_LABELS.map((label, i) => [
    label.kind === "absent" ? String(i + 1) : REDUNDANT_KEYS[i - PARTS.length],
    label,
  ]),
);

export function hotkeyFor(label: LabelDoc): string {
  for (const [key, l] of LABEL_HOTKEYS) {
    if (l.kind === label.kind && l.part === label.part) return key;
  }
  throw new Error(`no hotkey for ${labelKey(label)}`);
}

export type TaskState =
  | "unlabeled"
  | "labeled"
  | "in_review"
  | "approved"
  | "rejected"
  | "filtered";

export interface TaskDoc {
  task_id: string;
  frame_id: string;
  frame_path: string | null;
  state: TaskState;
  round: number;
  assigned_reviewer: string | null;
  labels: LabelDoc[];
  filter_reason: string | null;
  approvals: string[];
  rejecters: string[];
  created_at: number;
  updated_at: number;
}

export interface PartNodeDoc {
  part: BodyPart;
  box: [number, number, number, number];
  occluded: boolean;
}

export interface SlotDoc {
  part: BodyPart;
  box: [number, number, number, number];
}

export interface PersonDoc {
  person_id: string;
  body_box: [number, number, number, number];
  parts: PartNodeDoc[];
  absent_slots: SlotDoc[];
}

export interface SceneDoc {
  width: number;
  height: number;
  persons: PersonDoc[];
  floating_parts: PartNodeDoc[];
}

export interface RepairDoc {
  repair_id: string;
  original_path: string;
  repaired_path: string;
  task_id: string | null;
  verdict: "approve" | "reject" | null;
  reviewer: string | null;
  created_at: number;
}

export interface RepairDetailDoc extends RepairDoc {
  original: SceneDoc;
  repaired: SceneDoc;
}

export interface LabelSubmission {
  labels: LabelDoc[];
  filter_reason: string | null;
  reviewer: string | null;
}
