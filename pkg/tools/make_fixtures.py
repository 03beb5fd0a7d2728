"""Regenerate the committed pipeline fixtures under tests/fixtures/corpus.

Everything here is derived from fixed seeds; rerunning must reproduce the
committed files byte for byte. Run from the repository root:

    python tools/make_fixtures.py
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from synth import texture  # noqa: E402

from storylens.images import GrayImage, save_pgm  # noqa: E402
from storylens.providers import MockProvider  # noqa: E402

OUT = ROOT / "tests" / "fixtures" / "corpus"
N_ARTICLES = 10
DIM = 8
MODELS = ("enc_alpha", "enc_beta", "enc_gamma")

ARTICLES = [
    (
        "art-000",
        "City crews opened the rebuilt harbor bridge on Monday after two years "
        "of work. Mayor Dana Velez led the first crossing at dawn. The project "
        "replaced a span closed since the 2023 barge strike. Engineers said the "
        "new deck carries twice the old load. Ferry service will still run "
        "during peak hours. Local shops near the ramp expect foot traffic to "
        "return. The council will audit the final cost next month.",
    ),
    (
        "art-001",
        "A wildfire burned through pine stands north of Alder Creek on Tuesday. "
        "Crews from three counties dug containment lines overnight. Gusts "
        "pushed embers across the highway and forced a closure. No homes were "
        "lost but two barns burned. The sheriff lifted evacuation orders by "
        "Friday. Officials blamed a downed power line for the start. Burn "
        "scars will be reseeded before the rains.",
    ),
    (
        "art-002",
        "The regional orchestra premiered a symphony by composer Ana Reyes on "
        "Saturday. The piece sets fishing songs from the northern coast for "
        "full strings. Critics praised the slow third movement. The hall sold "
        "out three weeks in advance. A recording is planned for the spring "
        "season. Reyes dedicated the work to her grandmother. The orchestra "
        "tours the program to four cities next year.",
    ),
    (
        "art-003",
        "Researchers at the bay institute tagged forty juvenile sturgeon last "
        "week. The fish carry acoustic pings that log each river crossing. "
        "Early data show the juveniles holding in the brackish reach. Dams "
        "upstream cut spawning runs for decades. The team wants flow releases "
        "timed to the spring melt. Anglers must release any tagged fish. A "
        "public dashboard posts the tracks monthly.",
    ),
    (
        "art-004",
        "The city library reopened its map room after a year of restoration. "
        "Conservators flattened and cleaned three hundred charts. The oldest "
        "sheet dates to 1789 and shows the old shoreline. Humidity controls "
        "now hold the room at fifty percent. School groups can book tours "
        "starting in March. Digitized copies go online next quarter. Donors "
        "funded the work through the heritage trust.",
    ),
    (
        "art-005",
        "A late frost hit orchards across the valley on Thursday night. "
        "Growers ran wind machines until sunrise to stir warm air. Early "
        "blooming apricots took the worst damage. The co-op estimates a fifth "
        "of the crop is lost. Insurance adjusters begin visits next week. "
        "Cherry and apple buds largely survived. Markets expect higher stone "
        "fruit prices this summer.",
    ),
    (
        "art-006",
        "The transit authority tested battery buses on the hill routes this "
        "winter. Drivers reported steady grades even in the cold snap. Each "
        "bus charges at the depot in under an hour. The pilot replaced four "
        "diesel coaches. Riders noticed the quieter cabins right away. A "
        "fleet order of twenty is before the board. Federal grants would "
        "cover half the purchase.",
    ),
    (
        "art-007",
        "Volunteers counted wintering raptors along the river flats on "
        "Sunday. The tally found ninety hawks and a dozen eagles. Mild "
        "weather kept voles active and hunting easy. The count has run every "
        "January since 1981. Students from the field school joined this "
        "year. One banded harrier was traced to a nest two states north. "
        "Full results post to the society bulletin.",
    ),
    (
        "art-008",
        "The port moved record grain volumes through its north terminal in "
        "October. A second shiploader cut vessel wait times in half. Rail "
        "arrivals ran around the clock during harvest. Exporters credited "
        "the new storage domes. Dockworkers added a third shift for the "
        "rush. The authority plans channel dredging next summer. Analysts "
        "expect volumes to hold through winter.",
    ),
    (
        "art-009",
        "A pop-up clinic offered free eye exams in the market square on "
        "Saturday. Optometrists saw two hundred patients by closing. Donated "
        "frames let most people leave with glasses the same day. The mobile "
        "lab grinds lenses on site. Organizers plan quarterly visits next "
        "year. A grant from the lions club paid for the van. Teachers "
        "referred many of the students screened.",
    ),
]

BASE_CAPTIONS = [
    "A new bridge span stretches over the harbor at sunrise.",
    "Smoke rises over a pine forest as fire crews work a ridge.",
    "An orchestra performs on a concert hall stage under warm light.",
    "A biologist releases a tagged fish into a wide river.",
    "Old maps lie flattened on a long table in a reading room.",
    "Wind machines stand between orchard rows under a clear cold sky.",
    "An electric bus climbs a steep city street in winter.",
    "A hawk perches on a bare cottonwood above a frozen flat.",
    "A ship loads grain at a terminal lined with storage domes.",
    "People wait in line at a clinic tent in a market square.",
]


def unit(vec: np.ndarray) -> list[float]:
    return [float(x) for x in vec / np.linalg.norm(vec)]


def round6(vec: list[float]) -> list[float]:
    # fixed precision keeps the JSONL diff-stable across platforms
    return [round(x, 6) for x in vec]


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "stores").mkdir(exist_ok=True)
    (OUT / "images").mkdir(exist_ok=True)

    rng = np.random.default_rng(20240915)
    article_ids = [a for a, _ in ARTICLES]

    # Article image embeddings: one base direction per article, plus a small
    # per-store perturbation so the three stores disagree slightly. Queries
    # carry each store's exact stored vector for its gold article, which
    # makes cosine(query, gold) == 1 per store and plants recall@1 = 1.0.
    base_vectors = {a: rng.normal(size=DIM) for a in article_ids}
    store_vectors: dict[str, dict[str, list[float]]] = {}
    for model in MODELS:
        table = {}
        for article in article_ids:
            noisy = base_vectors[article] + 0.05 * rng.normal(size=DIM)
            table[article] = round6(unit(noisy))
        store_vectors[model] = table
        path = OUT / "stores" / f"{model}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for article in article_ids:
                fh.write(json.dumps({"id": article, "vector": table[article]}) + "\n")

    with (OUT / "documents.jsonl").open("w", encoding="utf-8") as fh:
        for article, text in ARTICLES:
            fh.write(json.dumps({"id": article, "text": text}) + "\n")

    # Article images: distinct seeded textures. The first two are a rotated
    # pair used by the rerank test (art-001's image is art-000's rotated 15
    # degrees), generated in tests, not here; pipeline images are independent.
    links = {}
    for i, article in enumerate(article_ids):
        image = GrayImage.from_array(texture(100 + i, size=128))
        image_path = OUT / "images" / f"{article}.pgm"
        save_pgm(image, image_path)
        links[article] = {"image": f"images/{article}.pgm"}
    (OUT / "links.json").write_text(
        json.dumps(links, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    with (OUT / "queries.jsonl").open("w", encoding="utf-8") as fh:
        for i, article in enumerate(article_ids):
            fh.write(
                json.dumps(
                    {
                        "id": f"q-{i:03d}",
                        "vectors": {m: store_vectors[m][article] for m in MODELS},
                    }
                )
                + "\n"
            )

    with (OUT / "base_captions.jsonl").open("w", encoding="utf-8") as fh:
        for i, caption in enumerate(BASE_CAPTIONS):
            fh.write(json.dumps({"id": f"q-{i:03d}", "caption": caption}) + "\n")

    with (OUT / "truth.jsonl").open("w", encoding="utf-8") as fh:
        for i, article in enumerate(article_ids):
            fh.write(json.dumps({"query_id": f"q-{i:03d}", "truth": [article]}) + "\n")

    # Text-embedding mock: deterministic direction per distinct input text.
    # Planting nothing would also work (the mock falls back to hash vectors),
    # but explicit vectors keep chunk selection readable and stable even if
    # the fallback scheme ever changes.
    text_vectors = {}
    seen: set[str] = set()
    for _, text in ARTICLES:
        from storylens.text_context import chunk_sliding, make_document

        for chunk in chunk_sliding(make_document("tmp", text)):
            seen.add(chunk.text)
    seen.update(BASE_CAPTIONS)
    text_rng = np.random.default_rng(777)
    for text in sorted(seen):
        text_vectors[MockProvider.text_key(text)] = round6(unit(text_rng.normal(size=16)))
    mock_def = {
        "dim": 16,
        "text_vectors": text_vectors,
        "captions": {},
        "default_caption": " ".join(
            f"word{i % 7}" for i in range(320)
        ),
    }
    (OUT / "mock_text.json").write_text(
        json.dumps(mock_def, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    config = {
        "seed": 7,
        "stores": [
            {"model_id": m, "path": f"stores/{m}.jsonl", "format": "jsonl"}
            for m in MODELS
        ],
        "documents": "documents.jsonl",
        "links": "links.json",
        "base_captions": "base_captions.jsonl",
        "providers": {
            "text": {"mock": "mock_text.json"},
            "caption": {"mock": "mock_text.json"},
        },
        "ransac": {"iterations": 500, "reproj_threshold": 3.0, "min_matches": 4},
        "detector": {"max_features": 300, "tau": 0.7},
        "generate_captions": True,
    }
    (OUT / "config.json").write_text(
        json.dumps(config, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    # sanity: all cosines between distinct articles stay well below 1
    for model in MODELS:
        mat = np.array([store_vectors[model][a] for a in article_ids])
        mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)
        sims = mat @ mat.T
        np.fill_diagonal(sims, -1.0)
        assert sims.max() < 0.95, f"{model}: planted vectors too correlated"
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
