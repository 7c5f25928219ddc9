"""Published reference constants for the compiled-dataset family.

The corpus-wide RGB statistics are reproducible only with the full corpus;
they are carried here as reference constants and recorded in manifests.
"""

# Whole-corpus RGB statistics of the large 200 um / 512 px dataset.
PTCGA200_MEAN = (0.7184, 0.5076, 0.6476)
PTCGA200_STD = (0.0380, 0.0527, 0.0352)

# Used when fine-tuning from randomly initialized weights.
SCRATCH_MEAN = (0.5, 0.5, 0.5)
SCRATCH_STD = (0.5, 0.5, 0.5)

# Evaluation-time center crop applied for the classification datasets.
EVAL_CROP_PX = 287
EVAL_CROPPED_KINDS = frozenset({"ptcga200", "pcam200"})
