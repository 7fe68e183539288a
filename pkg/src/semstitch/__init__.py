"""semstitch: semantic boundary-patch mosaicing of tissue fragments."""

from .errors import (
    BridgeError,
    CanvasBudgetError,
    DecodeError,
    DegenerateSampleError,
    FragmentTooSmallError,
    NoConsensusError,
    NoTissueError,
    ProtocolError,
    SemStitchError,
    ShortBoundaryError,
)
from .align import (
    RansacConfig,
    RigidTransform,
    fit_rigid,
    ransac_rigid,
    refine_rigid_boundary,
)
from .config import RunConfig
from .contour import BoundaryChain, point_at_arclength, trace_boundary
from .encoder import (
    EncoderSpec,
    encode,
    encode_batch,
    encode_batch_external,
    read_features_file,
    read_patches_file,
    write_features_file,
    write_patches_file,
)
from .matching import (
    CandidateMatch,
    build_stacks,
    match_candidates,
    matches_to_csv,
    pair_fragment,
)
from .mosaic import (
    Fragment,
    prepare_fragment,
    prepare_fragment_raster,
    prepare_fragments,
    render_composite,
    stitch,
)
from .patchex import Patch, PatchFrame, extract, frame_anchor, plan_frames
from .raster import (
    Raster,
    load_image,
    otsu_from_histogram,
    otsu_threshold,
    resample,
    save_image,
    segment_tissue,
    to_gray,
)

__version__ = "0.1.0"
