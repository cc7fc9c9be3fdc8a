/** The six emotion classes, in canonical index order (also the class index
 * order used by the model and the keyboard shortcuts 1-6). */
export const LABELS = ["worried", "happy", "neutral", "angry", "surprised", "sad"] as const;

export type EmotionLabel = (typeof LABELS)[number];

export function isLabel(value: string): value is EmotionLabel {
  return (LABELS as readonly string[]).includes(value);
}

/** Keyboard shortcut mapping: "1".."6" pick the labels in canonical order. */
export function keyToLabel(key: string): EmotionLabel | null {
  if (key.length !== 1 || key < "1" || key > "6") return null;
  return LABELS[Number(key) - 1] ?? null;
}
