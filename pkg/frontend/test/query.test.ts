import { describe, expect, it } from "vitest";

import { buildQuery, defaultForm, FILETYPES, FilterForm, QueryDoc } from "../src/query.js";

/**
 * Re-statement of the gateway sanitizer's acceptance rules, used to prove the
 * UI never emits a query the server would reject.
 */
function serverWouldAccept(doc: QueryDoc): boolean {
  const allowed = new Set([
    "species",
    "age_min",
    "age_max",
    "date_min",
    "date_max",
    "plant_id",
    "filetypes",
    "precompiled_id",
    "dataset_class",
  ]);
  for (const key of Object.keys(doc)) {
    if (!allowed.has(key)) return false;
  }
  if (doc.species !== undefined) {
    if (!Array.isArray(doc.species) || doc.species.length > 100) return false;
    for (const s of doc.species) {
      if (typeof s !== "string" || s.length === 0 || s.length > 200) return false;
    }
  }
  for (const bound of [doc.age_min, doc.age_max]) {
    if (bound !== undefined) {
      if (!Number.isInteger(bound) || bound < 0 || bound > 36_500) return false;
    }
  }
  if (doc.age_min !== undefined && doc.age_max !== undefined && doc.age_min > doc.age_max) {
    return false;
  }
  for (const d of [doc.date_min, doc.date_max]) {
    if (d !== undefined && !/^\d{4}-\d{2}-\d{2}$/.test(d)) return false;
  }
  if (doc.date_min && doc.date_max && doc.date_min > doc.date_max) return false;
  if (doc.plant_id !== undefined && (doc.plant_id.length === 0 || doc.plant_id.length > 200)) {
    return false;
  }
  if (doc.filetypes !== undefined) {
    if (!Array.isArray(doc.filetypes) || doc.filetypes.length === 0) return false;
    for (const ft of doc.filetypes) {
      if (!(FILETYPES as readonly string[]).includes(ft)) return false;
    }
  }
  if (doc.precompiled_id !== undefined) {
    if (!/^[A-Za-z0-9._-]{1,200}$/.test(doc.precompiled_id)) return false;
    const filters = [
      doc.species,
      doc.age_min,
      doc.age_max,
      doc.date_min,
      doc.date_max,
      doc.plant_id,
    ];
    if (filters.some((f) => f !== undefined)) return false;
    if (doc.filetypes !== undefined && doc.filetypes.length !== FILETYPES.length) return false;
  }
  if (doc.dataset_class !== "eagli" && doc.dataset_class !== "field") return false;
  return true;
}

// Small deterministic generator over the form's value space.
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function randomForm(rand: () => number): FilterForm {
  const pick = <T,>(items: T[]): T => items[Math.floor(rand() * items.length)]!;
  // Mostly-valid choices per field (so valid full forms are common), with
  // every class of invalid input mixed in.
  const form = defaultForm(rand() < 0.8 ? "eagli" : "field");
  form.species = pick(["", "", "", "Soybean", "Soybean, Canola", "  Wheat ,", "a,b,c,d", ",", "x".repeat(250)]);
  form.ageMin = pick(["", "", "", "0", "5", "12", "-3", "ten", "99999999", "3.5"]);
  form.ageMax = pick(["", "", "", "30", "45", "60", "-1", "later"]);
  form.dateMin = pick(["", "", "", "2021-03-01", "2021-06-15", "junk", "2021-13-01", "2021-02-30"]);
  form.dateMax = pick(["", "", "", "2021-09-30", "2022-01-01", "soon"]);
  form.plantId = pick(["", "", "", "plant-000001", " p ", "y".repeat(300)]);
  for (const ft of FILETYPES) {
    form.filetypes[ft] = rand() < 0.8;
  }
  form.precompiledId = pick(["", "", "", "", "", "set-a", "weird id!", "ok_set.2"]);
  return form;
}

describe("buildQuery", () => {
  it("never emits a document the gateway sanitizer would reject", () => {
    const rand = mulberry32(20240601);
    let accepted = 0;
    for (let i = 0; i < 2000; i++) {
      const form = randomForm(rand);
      const built = buildQuery(form);
      if (built.ok) {
        accepted++;
        expect(serverWouldAccept(built.query), JSON.stringify(built.query)).toBe(true);
      } else {
        expect(built.reason.length).toBeGreaterThan(0);
      }
    }
    // The generator hits plenty of valid states; the property is not vacuous.
    expect(accepted).toBeGreaterThan(200);
  });

  it("default form builds the least restrictive query", () => {
    const built = buildQuery(defaultForm());
    expect(built.ok).toBe(true);
    if (built.ok) {
      expect(built.query).toEqual({
        dataset_class: "eagli",
        filetypes: [...FILETYPES],
      });
    }
  });

  it("no filetypes selected disables actions with a reason", () => {
    const form = defaultForm();
    for (const ft of FILETYPES) form.filetypes[ft] = false;
    const built = buildQuery(form);
    expect(built.ok).toBe(false);
    if (!built.ok) expect(built.reason).toMatch(/filetype/i);
  });

  it("age bounds must be ordered", () => {
    const form = defaultForm();
    form.ageMin = "20";
    form.ageMax = "3";
    expect(buildQuery(form).ok).toBe(false);
  });

  it("precompiled excludes filters", () => {
    const form = defaultForm();
    form.precompiledId = "set-a";
    form.species = "Soybean";
    const built = buildQuery(form);
    expect(built.ok).toBe(false);
    if (!built.ok) expect(built.reason).toMatch(/precompiled/i);
  });

  it("field tab tags queries with the field dataset class", () => {
    const built = buildQuery(defaultForm("field"));
    expect(built.ok && built.query.dataset_class === "field").toBe(true);
  });
});
