/**
 * DOM wiring for the portal UI: tabs, the filter form, the three query
 * actions (check, sample, download), and the credentials dialog. All state
 * changes funnel through refresh() so the action buttons are enabled exactly
 * when the form builds a valid query.
 */

import { ApiError, PortalApi, PrecompiledEntry } from "./api.js";
import { runDownload } from "./download.js";
import {
  buildQuery,
  defaultForm,
  DatasetClass,
  FILETYPE_LABELS,
  FILETYPES,
  FilterForm,
} from "./query.js";
import { loadCredentials, saveCredentials } from "./storage.js";
import { pairSampleEntries, parseTar } from "./tar.js";

type Tab = "eagli" | "field" | "about";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function formatBytes(n: number): string {
  if (n >= 1e9) return `${(n / 1e9).toFixed(2)} GB`;
  if (n >= 1e6) return `${(n / 1e6).toFixed(1)} MB`;
  if (n >= 1e3) return `${(n / 1e3).toFixed(1)} kB`;
  return `${n} B`;
}

export function startApp(): void {
  const api = new PortalApi(() => loadCredentials(window.localStorage));

  let tab: Tab = "eagli";
  const forms: Record<DatasetClass, FilterForm> = {
    eagli: defaultForm("eagli"),
    field: defaultForm("field"),
  };
  let precompiled: PrecompiledEntry[] = [];

  const filetypeBoxes = new Map<string, HTMLInputElement>();
  const filetypesHost = el<HTMLDivElement>("filetypes");
  for (const ft of FILETYPES) {
    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = true;
    box.addEventListener("change", () => {
      activeForm().filetypes[ft] = box.checked;
      refresh();
    });
    label.append(box, ` ${FILETYPE_LABELS[ft]}`);
    filetypesHost.append(label);
    filetypeBoxes.set(ft, box);
  }

  const inputs = {
    species: el<HTMLInputElement>("species"),
    ageMin: el<HTMLInputElement>("age-min"),
    ageMax: el<HTMLInputElement>("age-max"),
    dateMin: el<HTMLInputElement>("date-min"),
    dateMax: el<HTMLInputElement>("date-max"),
    plantId: el<HTMLInputElement>("plant-id"),
    precompiled: el<HTMLSelectElement>("precompiled"),
  };
  const buttons = {
    check: el<HTMLButtonElement>("btn-check"),
    sample: el<HTMLButtonElement>("btn-sample"),
    download: el<HTMLButtonElement>("btn-download"),
    credentials: el<HTMLButtonElement>("btn-credentials"),
  };
  const statusLine = el<HTMLDivElement>("status-line");
  const formProblem = el<HTMLDivElement>("form-problem");
  const gallery = el<HTMLDivElement>("gallery");
  const downloadsHost = el<HTMLUListElement>("downloads");
  const credsDialog = el<HTMLDialogElement>("credentials-dialog");

  function activeForm(): FilterForm {
    return forms[tab === "field" ? "field" : "eagli"];
  }

  function syncFormInputs(): void {
    const form = activeForm();
    inputs.species.value = form.species;
    inputs.ageMin.value = form.ageMin;
    inputs.ageMax.value = form.ageMax;
    inputs.dateMin.value = form.dateMin;
    inputs.dateMax.value = form.dateMax;
    inputs.plantId.value = form.plantId;
    inputs.precompiled.value = form.precompiledId;
    for (const ft of FILETYPES) {
      filetypeBoxes.get(ft)!.checked = form.filetypes[ft];
    }
  }

  function refresh(): void {
    const haveCreds = loadCredentials(window.localStorage) !== null;
    const built = buildQuery(activeForm());
    const usable = built.ok && haveCreds && tab !== "about";
    buttons.check.disabled = !usable;
    buttons.download.disabled = !usable;
    buttons.sample.disabled = !usable || activeForm().precompiledId !== "";
    formProblem.textContent = !haveCreds
      ? "Set credentials to talk to the server"
      : built.ok
        ? ""
        : built.reason;
    el<HTMLSpanElement>("user-label").textContent = haveCreds
      ? loadCredentials(window.localStorage)!.username
      : "not signed in";
  }

  function setStatus(text: string, isError = false): void {
    statusLine.textContent = text;
    statusLine.classList.toggle("error", isError);
  }

  function reportError(error: unknown): void {
    if (error instanceof ApiError) {
      setStatus(`${error.status} ${error.code}: ${error.message}`, true);
    } else {
      setStatus(`Connection problem: ${String(error)}`, true);
    }
  }

  // --- tabs ------------------------------------------------------------

  for (const name of ["eagli", "field", "about"] as Tab[]) {
    el<HTMLButtonElement>(`tab-${name}`).addEventListener("click", () => {
      tab = name;
      document.body.dataset.tab = name;
      for (const other of ["eagli", "field", "about"]) {
        el(`tab-${other}`).classList.toggle("active", other === name);
      }
      if (tab !== "about") syncFormInputs();
      refresh();
    });
  }

  // --- form bindings -----------------------------------------------------

  const bind = (input: HTMLInputElement, key: keyof FilterForm) => {
    input.addEventListener("input", () => {
      (activeForm()[key] as string) = input.value;
      refresh();
    });
  };
  bind(inputs.species, "species");
  bind(inputs.ageMin, "ageMin");
  bind(inputs.ageMax, "ageMax");
  bind(inputs.dateMin, "dateMin");
  bind(inputs.dateMax, "dateMax");
  bind(inputs.plantId, "plantId");
  inputs.precompiled.addEventListener("change", () => {
    activeForm().precompiledId = inputs.precompiled.value;
    refresh();
  });

  // --- credentials ---------------------------------------------------------

  buttons.credentials.addEventListener("click", () => {
    const existing = loadCredentials(window.localStorage);
    el<HTMLInputElement>("cred-username").value = existing?.username ?? "";
    el<HTMLInputElement>("cred-password").value = "";
    credsDialog.showModal();
  });
  el<HTMLButtonElement>("cred-save").addEventListener("click", (event) => {
    event.preventDefault();
    saveCredentials(window.localStorage, {
      username: el<HTMLInputElement>("cred-username").value.trim(),
      password: el<HTMLInputElement>("cred-password").value,
    });
    credsDialog.close();
    refresh();
    void loadPrecompiled();
  });

  // --- actions ------------------------------------------------------------

  buttons.check.addEventListener("click", async () => {
    const built = buildQuery(activeForm());
    if (!built.ok) return;
    setStatus("Checking query…");
    try {
      const summary = await api.check(built.query);
      setStatus(
        `${summary.file_count.toLocaleString()} files in ${summary.part_count} part(s),` +
          ` ${formatBytes(summary.total_bytes)}`,
      );
      buttons.download.disabled = summary.file_count === 0;
    } catch (error) {
      reportError(error);
    }
  });

  buttons.sample.addEventListener("click", async () => {
    const built = buildQuery(activeForm());
    if (!built.ok) return;
    setStatus("Fetching sample…");
    gallery.replaceChildren();
    try {
      const archive = await api.sample(built.query);
      const pairs = pairSampleEntries(parseTar(archive));
      let shown = 0;
      for (const [stem, pair] of pairs) {
        if (!pair.image) continue;
        const figure = document.createElement("figure");
        const img = document.createElement("img");
        img.src = URL.createObjectURL(new Blob([pair.image.data as BlobPart], { type: "image/png" }));
        img.alt = stem;
        if (pair.sidecar) {
          try {
            const meta = JSON.parse(new TextDecoder().decode(pair.sidecar.data));
            img.title = `${meta.label}, age ${meta.age_days}d, ${String(meta.capture_datetime).slice(0, 10)}`;
          } catch {
            img.title = stem;
          }
        }
        const caption = document.createElement("figcaption");
        caption.textContent = stem;
        figure.append(img, caption);
        gallery.append(figure);
        shown++;
      }
      setStatus(`Sample: ${shown} image(s); hover a thumbnail for its metadata`);
    } catch (error) {
      reportError(error);
    }
  });

  buttons.download.addEventListener("click", async () => {
    const built = buildQuery(activeForm());
    if (!built.ok) return;
    const item = document.createElement("li");
    downloadsHost.prepend(item);

    if (built.query.precompiled_id) {
      item.textContent = `precompiled ${built.query.precompiled_id}: fetching…`;
      try {
        const blob = await api.fetchPrecompiled(built.query.precompiled_id);
        deliverFile(`${built.query.precompiled_id}.tar`, blob);
        item.textContent = `precompiled ${built.query.precompiled_id}: delivered`;
      } catch (error) {
        item.textContent = `precompiled ${built.query.precompiled_id}: failed`;
        reportError(error);
      }
      return;
    }

    try {
      const outcome = await runDownload(api, built.query, {
        deliver: deliverFile,
        onUpdate: (state) => {
          const done = state.parts.filter((p) => p === "done").length;
          const flags = state.parts
            .map((p, i) => (p === "abandoned" ? `#${i} abandoned` : null))
            .filter(Boolean)
            .join(", ");
          item.textContent =
            `job ${state.jobId.slice(0, 8)}…: ${done}/${state.parts.length} parts` +
            (flags ? ` (${flags})` : "");
        },
      });
      if (outcome.abandoned.length === 0) {
        setStatus(`Download complete: ${outcome.completed} part(s)`);
      } else {
        setStatus(`Download finished with abandoned parts: ${outcome.abandoned.join(", ")}`, true);
      }
    } catch (error) {
      reportError(error);
    }
  });

  function deliverFile(filename: string, data: Blob): void {
    const link = document.createElement("a");
    link.href = URL.createObjectURL(data);
    link.download = filename;
    link.click();
    setTimeout(() => URL.revokeObjectURL(link.href), 30_000);
  }

  async function loadPrecompiled(): Promise<void> {
    try {
      precompiled = await api.listPrecompiled();
    } catch {
      precompiled = []; // not signed in yet, or server unreachable
    }
    inputs.precompiled.replaceChildren(new Option("— none —", ""));
    for (const entry of precompiled) {
      inputs.precompiled.append(
        new Option(`${entry.name} (${entry.file_count} files, ${formatBytes(entry.bytes)})`, entry.id),
      );
    }
  }

  syncFormInputs();
  refresh();
  void loadPrecompiled();
}

startApp();
