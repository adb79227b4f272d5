"""Fixed-resolution ViT with tiling and 2x2 pixel-shuffle token compression."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConfigError, DimensionError
from .params import ParameterStore, scaled_uniform


@dataclass(frozen=True)
class VisionConfig:
    base_resolution: int = 32
    patch_size: int = 4
    embed_dim: int = 32
    depth: int = 2
    heads: int = 2
    max_tiles: int = 8
    use_thumbnail: bool = False
    channels: int = 3

    def __post_init__(self):
        if self.patch_size <= 0 or self.base_resolution % self.patch_size:
            raise ConfigError("base_resolution must be divisible by patch_size")
        if (self.base_resolution // self.patch_size) % 2:
            raise ConfigError("patches per side must be even for 2x2 pixel shuffle")
        if self.max_tiles < 1:
            raise ConfigError("max_tiles must be >= 1")
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")

    @property
    def grid(self) -> int:
        """Patches per side."""
        return self.base_resolution // self.patch_size

    @property
    def tokens_per_tile(self) -> int:
        return self.grid * self.grid

    @property
    def shuffled_tokens_per_tile(self) -> int:
        return self.tokens_per_tile // 4

    @property
    def out_dim(self) -> int:
        return 4 * self.embed_dim


@dataclass(frozen=True)
class TileLayout:
    grid_rows: int
    grid_cols: int
    includes_thumbnail: bool = False

    @property
    def tile_count(self) -> int:
        return self.grid_rows * self.grid_cols + int(self.includes_thumbnail)


@dataclass
class PatchGrid:
    rows: int
    cols: int
    embeddings: T.Tensor  # [rows*cols, embed_dim]

    def __post_init__(self):
        if self.embeddings.shape[0] != self.rows * self.cols:
            raise DimensionError(f"{self.rows}x{self.cols} grid but {self.embeddings.shape[0]} embeddings")


# ---------------------------------------------------------------------------
# tiling


def select_tile_grid(image_w: int, image_h: int, cfg: VisionConfig) -> TileLayout:
    """Pick the tile grid whose aspect ratio is closest (in log space) to the image's.

    Candidates are all ``rows x cols`` grids with at most ``max_tiles`` tiles.
    Ties go to fewer tiles, then fewer rows.  Images no larger than the base
    resolution on both sides get a single tile.
    """
    w, h = max(int(image_w), 1), max(int(image_h), 1)
    thumb = cfg.use_thumbnail
    if w <= cfg.base_resolution and h <= cfg.base_resolution:
        return TileLayout(1, 1, False)
    best = None
    for r in range(1, cfg.max_tiles + 1):
        for c in range(1, cfg.max_tiles // r + 1):
            # |log((c/r)/(w/h))| is monotone in max(a,b)/min(a,b) with a=c*h, b=r*w
            a, b = c * h, r * w
            key = (Fraction(max(a, b), min(a, b)), r * c, r)
            if best is None or key < best[0]:
                best = (key, r, c)
    _, r, c = best
    return TileLayout(r, c, thumb and r * c > 1)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of ``[h, w, c]`` with half-pixel centres (no corner alignment)."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.astype(np.float64, copy=True)

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    img = img.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def make_tiles(image: np.ndarray, cfg: VisionConfig, layout: TileLayout | None = None) -> np.ndarray:
    """Cut an ``[h, w, c]`` image into ``[tile_count, base, base, c]`` tiles, row-major."""
    h, w = image.shape[:2]
    layout = layout or select_tile_grid(w, h, cfg)
    base = cfg.base_resolution
    big = resize_bilinear(image, layout.grid_rows * base, layout.grid_cols * base)
    tiles = (
        big.reshape(layout.grid_rows, base, layout.grid_cols, base, -1)
        .transpose(0, 2, 1, 3, 4)
        .reshape(layout.grid_rows * layout.grid_cols, base, base, -1)
    )
    if layout.includes_thumbnail:
        tiles = np.concatenate([tiles, resize_bilinear(image, base, base)[None]], axis=0)
    return tiles


# ---------------------------------------------------------------------------
# parameters and forward


def init_vision(cfg: VisionConfig, seed: int) -> ParameterStore:
    rng = np.random.default_rng([seed, 1])
    store = ParameterStore()
    pdim = cfg.patch_size * cfg.patch_size * cfg.channels
    store.add("vision.patch.w", scaled_uniform(rng, pdim, (pdim, cfg.embed_dim)), "vision")
    store.add("vision.patch.b", np.zeros(cfg.embed_dim), "vision")
    store.add("vision.pos", rng.normal(0.0, 0.1, (cfg.tokens_per_tile, cfg.embed_dim)), "vision")
    for i in range(cfg.depth):
        nn.init_block(store, f"vision.blocks.{i}", cfg.embed_dim, "vision", rng)
    store.add("vision.lnf.g", np.ones(cfg.embed_dim), "vision")
    store.add("vision.lnf.b", np.zeros(cfg.embed_dim), "vision")
    return store


def _patch_pixels(tiles: np.ndarray, cfg: VisionConfig) -> np.ndarray:
    n, hgt, wid = tiles.shape[:3]
    base, p = cfg.base_resolution, cfg.patch_size
    if hgt != base or wid != base or tiles.shape[3] != cfg.channels:
        raise DimensionError(f"tiles must be [n, {base}, {base}, {cfg.channels}], got {tiles.shape}")
    g = cfg.grid
    return tiles.reshape(n, g, p, g, p, cfg.channels).transpose(0, 1, 3, 2, 4, 5).reshape(n, g * g, p * p * cfg.channels)


def patchify(tile_pixels: np.ndarray, cfg: VisionConfig, params: ParameterStore) -> PatchGrid:
    """Split one ``[base, base, c]`` tile into patches and project them to ``embed_dim``."""
    tile_pixels = np.asarray(tile_pixels)
    if tile_pixels.ndim != 3:
        raise DimensionError(f"tile must be [base, base, channels], got {tile_pixels.shape}")
    pix = T.as_tensor(_patch_pixels(tile_pixels[None], cfg)[0])
    emb = nn.linear(pix, params, "vision.patch")
    return PatchGrid(cfg.grid, cfg.grid, emb)


def pixel_shuffle(pg: PatchGrid) -> T.Tensor:
    """Merge each 2x2 block of tokens into one token of 4x width.

    Output token ``(i, j)`` concatenates inputs ``(2i,2j), (2i,2j+1), (2i+1,2j),
    (2i+1,2j+1)`` in that order.
    """
    x = pg.embeddings.reshape(1, pg.rows * pg.cols, pg.embeddings.shape[1])
    out = shuffle_tokens(x, pg.rows, pg.cols)
    return out.reshape(out.shape[1], out.shape[2])


def shuffle_tokens(x: T.Tensor, rows: int, cols: int) -> T.Tensor:
    """Batched pixel shuffle of ``[n, rows*cols, d]`` into ``[n, rows*cols/4, 4d]``."""
    if rows % 2 or cols % 2:
        raise DimensionError(f"pixel shuffle needs an even grid, got {rows}x{cols}")
    n, _, d = x.shape
    return (
        x.reshape(n, rows // 2, 2, cols // 2, 2, d)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, (rows // 2) * (cols // 2), 4 * d)
    )


def vit_tokens(tiles: np.ndarray, cfg: VisionConfig, params: ParameterStore) -> T.Tensor:
    """Final-norm token outputs ``[n, grid*grid, embed_dim]`` for a stack of tiles."""
    pix = T.as_tensor(_patch_pixels(np.asarray(tiles, dtype=T.get_default_dtype()), cfg))
    x = nn.linear(pix, params, "vision.patch") + params["vision.pos"]
    for i in range(cfg.depth):
        x = nn.block(x, params, f"vision.blocks.{i}", cfg.heads, causal=False)
    return T.layernorm(x, params["vision.lnf.g"], params["vision.lnf.b"], nn.LN_EPS)


def encode_tiles(tiles: np.ndarray, cfg: VisionConfig, params: ParameterStore) -> T.Tensor:
    """``[n, base, base, c]`` tiles -> ``[n, tokens/4, 4*embed_dim]`` shuffled tokens."""
    return shuffle_tokens(vit_tokens(tiles, cfg, params), cfg.grid, cfg.grid)


def encode_image(image: np.ndarray, cfg: VisionConfig, params: ParameterStore) -> T.Tensor:
    """Tile, encode and pixel-shuffle one image; tiles are concatenated tile-major."""
    tiles = make_tiles(np.asarray(image), cfg)
    out = encode_tiles(tiles, cfg, params)
    return out.reshape(out.shape[0] * out.shape[1], cfg.out_dim)


def pooled_features(image: np.ndarray, cfg: VisionConfig, params: ParameterStore) -> T.Tensor:
    """Mean over the final token outputs (pre-shuffle) of a single base-resolution tile."""
    image = np.asarray(image)
    if image.shape[:2] != (cfg.base_resolution, cfg.base_resolution):
        image = resize_bilinear(image, cfg.base_resolution, cfg.base_resolution)
    return T.mean(vit_tokens(image[None], cfg, params), axis=1).reshape(cfg.embed_dim)


def pooled_features_batch(images: np.ndarray, cfg: VisionConfig, params: ParameterStore) -> np.ndarray:
    """``pooled_features`` for a stack ``[n, h, w, c]``; resized to base resolution when needed."""
    images = np.asarray(images)
    if images.shape[1:3] != (cfg.base_resolution, cfg.base_resolution):
        images = np.stack([resize_bilinear(im, cfg.base_resolution, cfg.base_resolution) for im in images])
    with T.no_grad():
        return T.mean(vit_tokens(images, cfg, params), axis=1).data
