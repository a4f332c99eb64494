"""File formats: PFM depth rasters, ASCII PLY clouds, 8-bit guide rasters.

Depth rasters are single-channel little-endian float32 PFM with the
conventional bottom-to-top row order and scale header -1.0; invalid
pixels are NaN.  Point clouds are ASCII PLY with properties
x y z nx ny nz red green blue variance.
"""

import numpy as np

from .errors import ConfigurationError


def write_pfm(path, image):
    """Write a (H, W) float array as a grayscale PFM file."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("PFM writer expects a single-channel image")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{image.shape[1]} {image.shape[0]}\n".encode("ascii"))
        f.write(b"-1.0\n")
        # PFM stores rows bottom to top.
        f.write(np.flipud(image).astype("<f4").tobytes())


def read_pfm(path):
    """Read a grayscale PFM file into a (H, W) float64 array."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimensions")
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * width * height), dtype=dtype)
        if data.size != width * height:
            raise ValueError(f"{path}: truncated PFM payload")
    img = data.reshape(height, width).astype(np.float64)
    return np.flipud(img).copy()


def read_rgb_image(path):
    """8-bit RGB raster (PNG/PPM/...) scaled to [0, 1]."""
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def read_gray_image(path):
    """8-bit single-channel raster scaled to [0, 1]."""
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


def write_rgb_image(path, rgb01):
    from PIL import Image
    arr = np.clip(np.asarray(rgb01) * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def write_gray_image(path, gray01):
    from PIL import Image
    arr = np.clip(np.asarray(gray01) * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


PLY_PROPERTIES = ("x", "y", "z", "nx", "ny", "nz",
                  "red", "green", "blue", "variance")


def write_ply(path, points, normals=None, colors=None, variances=None):
    """ASCII PLY cloud with normals, 8-bit colors and per-point variance."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(points)
    if normals is None:
        normals = np.zeros((n, 3))
    if colors is None:
        colors = np.zeros((n, 3), dtype=np.uint8)
    else:
        colors = np.rint(np.clip(np.asarray(colors, dtype=float) * 255.0,
                                 0, 255)).astype(np.uint8)
    if variances is None:
        variances = np.full(n, np.nan)
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    variances = np.asarray(variances, dtype=float).reshape(-1)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {n}\n")
        for prop in ("x", "y", "z", "nx", "ny", "nz"):
            f.write(f"property float {prop}\n")
        for prop in ("red", "green", "blue"):
            f.write(f"property uchar {prop}\n")
        f.write("property float variance\n")
        f.write("end_header\n")
        for i in range(n):
            p, nm = points[i], normals[i]
            r, g, b = colors[i]
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                    f"{nm[0]:.9g} {nm[1]:.9g} {nm[2]:.9g} "
                    f"{r} {g} {b} {variances[i]:.9g}\n")


def read_ply(path):
    """Read an ASCII PLY cloud.

    Returns a dict with ``points`` (n, 3) and, when present in the file,
    ``normals`` (n, 3), ``colors`` (n, 3) in [0, 1] and ``variances``.
    Unknown properties are ignored.
    """
    with open(path, "r") as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = f.readline().strip()
        if not fmt.startswith("format ascii"):
            raise ValueError(f"{path}: only ASCII PLY is supported")
        n = None
        props = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: unexpected end of header")
            line = line.strip()
            if line.startswith("comment"):
                continue
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
                props = []
            elif line.startswith("element"):
                raise ValueError(
                    f"{path}: only vertex elements are supported")
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        if n is None:
            raise ValueError(f"{path}: missing vertex element")
        rows = np.loadtxt(f, dtype=float, max_rows=n, ndmin=2) \
            if n else np.zeros((0, len(props)))
    if rows.shape != (n, len(props)):
        raise ValueError(f"{path}: vertex data does not match header")
    col = {p: i for i, p in enumerate(props)}
    for needed in ("x", "y", "z"):
        if needed not in col:
            raise ValueError(f"{path}: missing vertex property {needed!r}")
    out = {"points": rows[:, [col["x"], col["y"], col["z"]]]}
    if all(p in col for p in ("nx", "ny", "nz")):
        out["normals"] = rows[:, [col["nx"], col["ny"], col["nz"]]]
    if all(p in col for p in ("red", "green", "blue")):
        out["colors"] = rows[:, [col["red"], col["green"],
                                 col["blue"]]] / 255.0
    if "variance" in col:
        out["variances"] = rows[:, col["variance"]]
    return out


def depth_field_to_pfm(path, field):
    """Serialize a DepthField; invalid pixels become NaN."""
    img = np.where(field.valid, field.depths, np.nan)
    write_pfm(path, img)


def pfm_to_sparse_observations(path):
    """Load a PFM with NaN holes as (pixels, depths) over its own grid."""
    img = read_pfm(path)
    mask = np.isfinite(img)
    if mask.any() and np.any(img[mask] <= 0):
        raise ConfigurationError(
            f"{path}: observed depths must be positive")
    pixels = np.flatnonzero(mask.reshape(-1))
    depths = img.reshape(-1)[pixels]
    return img.shape, pixels, depths
