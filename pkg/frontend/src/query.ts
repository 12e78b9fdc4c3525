/**
 * Filter-form state and its translation into a gateway query document.
 *
 * The validation here mirrors the gateway's sanitizer rule for rule, so any
 * form state that builds a query will be accepted server-side; states that
 * would be rejected instead disable the action buttons with a visible reason.
 */

export const FILETYPES = [
  "single_plant",
  "multiple_plant",
  "annotated",
  "metadata_json",
] as const;

export type FileTypeName = (typeof FILETYPES)[number];

export const FILETYPE_LABELS: Record<FileTypeName, string> = {
  single_plant: "Single plant images",
  multiple_plant: "Multiple plant images",
  annotated: "Annotated images",
  metadata_json: "Metadata (JSON)",
};

export type DatasetClass = "eagli" | "field";

export interface FilterForm {
  species: string; // comma-separated labels; empty deactivates the filter
  ageMin: string;
  ageMax: string;
  dateMin: string;
  dateMax: string;
  plantId: string;
  filetypes: Record<FileTypeName, boolean>;
  precompiledId: string; // "" = build from filters
  datasetClass: DatasetClass;
}

export interface QueryDoc {
  species?: string[];
  age_min?: number;
  age_max?: number;
  date_min?: string;
  date_max?: string;
  plant_id?: string;
  filetypes?: FileTypeName[];
  precompiled_id?: string;
  dataset_class: DatasetClass;
}

export type BuildResult =
  | { ok: true; query: QueryDoc }
  | { ok: false; reason: string };

const MAX_AGE_DAYS = 36_500;
const MAX_STRING = 200;
const MAX_SPECIES = 100;
const DATE_PATTERN = /^\d{4}-\d{2}-\d{2}$/;

export function defaultForm(datasetClass: DatasetClass = "eagli"): FilterForm {
  return {
    species: "",
    ageMin: "",
    ageMax: "",
    dateMin: "",
    dateMax: "",
    plantId: "",
    filetypes: {
      single_plant: true,
      multiple_plant: true,
      annotated: true,
      metadata_json: true,
    },
    datasetClass,
    precompiledId: "",
  };
}

function parseAge(raw: string, label: string): number | string {
  if (!/^\d+$/.test(raw.trim())) {
    return `${label} must be a whole number of days`;
  }
  const value = Number(raw.trim());
  if (value > MAX_AGE_DAYS) {
    return `${label} is out of range (max ${MAX_AGE_DAYS})`;
  }
  return value;
}

function parseDate(raw: string, label: string): string | null {
  const value = raw.trim();
  if (!DATE_PATTERN.test(value)) {
    return `${label} must be a YYYY-MM-DD date`;
  }
  const [y, m, d] = value.split("-").map(Number) as [number, number, number];
  const probe = new Date(Date.UTC(y, m - 1, d));
  if (probe.getUTCFullYear() !== y || probe.getUTCMonth() !== m - 1 || probe.getUTCDate() !== d) {
    return `${label} is not a real calendar date`;
  }
  return null;
}

export function splitSpecies(raw: string): string[] {
  return raw
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
}

/** Translate the form into a query document, or say why the form is invalid. */
export function buildQuery(form: FilterForm): BuildResult {
  const query: QueryDoc = { dataset_class: form.datasetClass };

  const precompiled = form.precompiledId.trim();
  const species = splitSpecies(form.species);
  const hasFilters =
    species.length > 0 ||
    form.ageMin.trim() !== "" ||
    form.ageMax.trim() !== "" ||
    form.dateMin.trim() !== "" ||
    form.dateMax.trim() !== "" ||
    form.plantId.trim() !== "" ||
    FILETYPES.some((ft) => !form.filetypes[ft]);

  if (precompiled !== "") {
    if (hasFilters) {
      return { ok: false, reason: "A precompiled dataset cannot be combined with filters" };
    }
    if (!/^[A-Za-z0-9._-]+$/.test(precompiled) || precompiled.length > MAX_STRING) {
      return { ok: false, reason: "Precompiled dataset id contains invalid characters" };
    }
    query.precompiled_id = precompiled;
    return { ok: true, query };
  }

  if (species.length > MAX_SPECIES) {
    return { ok: false, reason: `At most ${MAX_SPECIES} species can be selected` };
  }
  for (const name of species) {
    if (name.length > MAX_STRING) {
      return { ok: false, reason: "Species names are limited to 200 characters" };
    }
  }
  if (species.length > 0) {
    query.species = species;
  }

  let ageMin: number | undefined;
  let ageMax: number | undefined;
  if (form.ageMin.trim() !== "") {
    const parsed = parseAge(form.ageMin, "Minimal age");
    if (typeof parsed === "string") return { ok: false, reason: parsed };
    query.age_min = ageMin = parsed;
  }
  if (form.ageMax.trim() !== "") {
    const parsed = parseAge(form.ageMax, "Maximal age");
    if (typeof parsed === "string") return { ok: false, reason: parsed };
    query.age_max = ageMax = parsed;
  }
  if (ageMin !== undefined && ageMax !== undefined && ageMin > ageMax) {
    return { ok: false, reason: "Minimal age exceeds maximal age" };
  }

  if (form.dateMin.trim() !== "") {
    const problem = parseDate(form.dateMin, "Earliest date");
    if (problem) return { ok: false, reason: problem };
    query.date_min = form.dateMin.trim();
  }
  if (form.dateMax.trim() !== "") {
    const problem = parseDate(form.dateMax, "Latest date");
    if (problem) return { ok: false, reason: problem };
    query.date_max = form.dateMax.trim();
  }
  if (query.date_min && query.date_max && query.date_min > query.date_max) {
    return { ok: false, reason: "Earliest date is after latest date" };
  }

  const plantId = form.plantId.trim();
  if (plantId !== "") {
    if (plantId.length > MAX_STRING) {
      return { ok: false, reason: "Plant id is limited to 200 characters" };
    }
    query.plant_id = plantId;
  }

  const selected = FILETYPES.filter((ft) => form.filetypes[ft]);
  if (selected.length === 0) {
    return { ok: false, reason: "Select at least one filetype" };
  }
  query.filetypes = selected;

  return { ok: true, query };
}
