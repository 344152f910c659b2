"""Synthesis and evaluation of fine-grained vision-language probes.

The package builds candidate sets of images and captions that differ in
exactly one attribute (object size, position, existence, or count), scores
vision-language models on matching them symmetrically, and provides a
hard-negative-aware contrastive loss with analytically verified gradients.
"""

from .backends import (
    BACKEND_URL_ENV,
    Backend,
    BackendCapabilitySet,
    BackendError,
    CapabilityError,
    GenerationRequest,
    HttpBackendClient,
    ProceduralBackend,
    ProtocolError,
    SegmentationNotFoundError,
    SegmentationResult,
    TransportError,
    WIRE_VERSION,
    generate_object_image,
    object_prompt,
)
from .core import (
    COCO_CLASSES,
    BinaryMask,
    CanvasLayout,
    PixelBox,
    Placement,
    RasterImage,
    SpriteAsset,
    SpriteLibrary,
    ValidationError,
    box_intersection,
    box_iou,
    derive_seed,
    placement_pixel_box,
    scaled_bbox_dims,
    validate_layout,
)
from .dataset import (
    CaseRecord,
    DatasetReport,
    ManifestError,
    iter_cases,
    load_case_images,
    read_manifest,
    validate_dataset,
    write_dataset,
)
from .evaluation import (
    CLS_PROMPT_TEMPLATE,
    EmbeddingScorer,
    EvalCase,
    EvalReport,
    EvaluationError,
    OracleScorer,
    RandomScorer,
    Scorer,
    SubsetResult,
    TableScorer,
    chance_level,
    class_prompts,
    cls_acc,
    evaluate,
    i2t_acc,
    load_eval_cases,
    t2i_acc,
)
from .hardneg import (
    EmbeddingBatch,
    EmbeddingBatchSpec,
    GradCheckReport,
    Gradients,
    HardNegBatchError,
    LossConfig,
    TemperatureParam,
    assemble_batch,
    build_hn_batch,
    cosine_matrix,
    finite_difference_grad,
    grad_loss,
    gradcheck,
    loss_clip,
    loss_hn,
    loss_total,
    read_embeddings,
    similarity,
    write_embeddings,
)
from .semantics import (
    ExistenceLabel,
    GridCell,
    Label,
    RelSizeRelation,
    SizeLevel,
    SpatialRelation,
    SubsetKind,
    canonical_labels,
    classify_absolute_position,
    classify_absolute_size,
    classify_existence,
    classify_relative_position,
    classify_relative_size,
    label_slug,
    parse_label,
    render_caption,
    subset_cardinality,
)
from .synthesis import (
    CandidatePlan,
    CasePlan,
    ExecutedCase,
    SynthesisError,
    SynthesisInfeasibleError,
    background_consistency,
    build_sprite_library,
    execute_case,
    measure_candidate,
    plan_case,
    synthesize_case,
)

__version__ = "0.1.0"
