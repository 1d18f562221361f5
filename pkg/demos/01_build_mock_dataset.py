"""Build a tiny perturbation dataset end to end with the mock backends.

Real runs swap the mocks for GPU-backed generators, VQA, detection,
segmentation, inpainting and race classification models. Everything else
(prompts, filtering rules, seeds, manifest format) is identical.

    python demos/01_build_mock_dataset.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

from fairperturb import PipelineConfig, run_pipeline, validate_set
from fairperturb.adapters import DEMO_MOCK_CONFIG, mock_adapters_from_config
from fairperturb.groups import get_occupation
from fairperturb.pipeline import format_yield_table
from fairperturb.store import ImageStore

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="fairperturb-demo-"))

# Two occupations, 40 candidate images each. The full-size run uses the
# PipelineConfig defaults: 5000 generated, top 2000 by realism, 1200 sets.
config = PipelineConfig(
    occupations=[get_occupation("chef"), get_occupation("firefighter")],
    images_per_occupation=40,
    top_k=20,
    sets_per_occupation=5,
    image_size=(64, 64),
    seed=0,
)
store = ImageStore(out / "dataset")
adapters = mock_adapters_from_config(DEMO_MOCK_CONFIG, store)
manifest = run_pipeline(config, adapters, store)
manifest.write(out / "manifest.jsonl")

print("Yield per stage (input -> kept):\n")
print(format_yield_table(manifest))

print("\nOne sampled perturbation set:")
pset = manifest.sampled_sets[0]
for group, variant in pset.variants.items():
    print(f"  {group.canonical_name:<10} {variant.prompt}")
    print(f"  {'':<10} -> {variant.image_ref}")
print(f"  problems: {validate_set(pset) or 'none'}")

print(f"\nManifest written to {out / 'manifest.jsonl'}")
