#include "scribble/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#ifdef SCRIBBLE_HAVE_PNG
#include <png.h>
#endif

#include "scribble/error.hpp"

namespace scribble::data {

using losses::Label;
using losses::ScribbleMap;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Whitespace- and comment-delimited header token of a PNM file.
int pnm_header_int(const std::vector<std::uint8_t>& b, std::size_t& pos, const fs::path& path) {
    while (pos < b.size()) {
        if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else if (std::isspace(b[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    long v = 0;
    const std::size_t start = pos;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos++] - '0');
        if (v > 1 << 20) throw IoError("implausible PNM header value in " + path.string());
    }
    if (pos == start) throw IoError("malformed PNM header in " + path.string());
    return static_cast<int>(v);
}

Raster read_pnm(const std::vector<std::uint8_t>& b, const fs::path& path) {
    Raster r;
    r.channels = b[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    r.width = pnm_header_int(b, pos, path);
    r.height = pnm_header_int(b, pos, path);
    const int maxval = pnm_header_int(b, pos, path);
    if (maxval < 1 || maxval > 255) {
        throw IoError("unsupported PNM bit depth (maxval " + std::to_string(maxval) + ", need <= 255) in " + path.string());
    }
    if (r.width < 1 || r.height < 1) throw IoError("empty PNM image " + path.string());
    if (pos >= b.size() || !std::isspace(b[pos])) throw IoError("malformed PNM header in " + path.string());
    ++pos;
    const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
    if (b.size() - pos < n) throw IoError("truncated PNM data in " + path.string());
    r.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + n));
    if (maxval != 255)
        for (auto& v : r.pixels) v = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
    return r;
}

void write_pnm(const fs::path& path, const Raster& r) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << (r.channels == 1 ? "P5" : "P6") << '\n' << r.width << ' ' << r.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

#ifdef SCRIBBLE_HAVE_PNG
Raster read_png(const fs::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    if (img.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&img);
        throw IoError("unsupported PNG bit depth (16-bit) in " + path.string());
    }
    Raster r;
    r.channels = (img.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
    img.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    r.width = static_cast<int>(img.width);
    r.height = static_cast<int>(img.height);
    r.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, r.pixels.data(), 0, nullptr)) {
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    return r;
}

void write_png(const fs::path& path, const Raster& r) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(r.width);
    img.height = static_cast<png_uint_32>(r.height);
    img.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, r.pixels.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
    }
}
#endif

void check_raster(const Raster& r) {
    if (r.channels != 1 && r.channels != 3) throw ArgumentError("raster must have 1 or 3 channels, got " + std::to_string(r.channels));
    if (r.pixels.size() != static_cast<std::size_t>(r.width) * r.height * r.channels) throw ShapeError("raster pixel count does not match its extents");
}

std::string lower_extension(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

}  // namespace

bool png_supported() {
#ifdef SCRIBBLE_HAVE_PNG
    return true;
#else
    return false;
#endif
}

Raster read_raster(const fs::path& path) {
    const auto b = read_bytes(path);
    if (b.size() >= 2 && b[0] == 'P' && (b[1] == '5' || b[1] == '6')) return read_pnm(b, path);
    static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (b.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, b.begin())) {
#ifdef SCRIBBLE_HAVE_PNG
        return read_png(path);
#else
        throw IoError("PNG support not compiled in; cannot read " + path.string());
#endif
    }
    throw IoError("unrecognised raster format (expected binary PGM/PPM or PNG): " + path.string());
}

void write_raster(const fs::path& path, const Raster& raster) {
    check_raster(raster);
    const std::string ext = lower_extension(path);
    if (ext == ".png") {
#ifdef SCRIBBLE_HAVE_PNG
        write_png(path, raster);
        return;
#else
        throw IoError("PNG support not compiled in; cannot write " + path.string());
#endif
    }
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
        write_pnm(path, raster);
        return;
    }
    throw IoError("unsupported output extension '" + ext + "' for " + path.string());
}

Grid raster_to_grid(const Raster& r) {
    check_raster(r);
    Grid g(Shape{r.channels, r.height, r.width});
    for (int c = 0; c < r.channels; ++c)
        for (int i = 0; i < r.height; ++i)
            for (int j = 0; j < r.width; ++j) g.at(c, i, j) = r.at(i, j, c) / 255.0;
    return g;
}

Raster grid_to_raster(const Grid& g) {
    if (g.rank() != 3 || (g.dim(0) != 1 && g.dim(0) != 3)) throw ShapeError("grid_to_raster: expected 1 or 3 x H x W, got " + to_string(g.shape()));
    Raster r{g.dim(0), g.dim(1), g.dim(2), {}};
    r.pixels.resize(g.size());
    for (int c = 0; c < r.channels; ++c)
        for (int i = 0; i < r.height; ++i)
            for (int j = 0; j < r.width; ++j) r.at(i, j, c) = static_cast<std::uint8_t>(std::lround(std::clamp(g.at(c, i, j), 0.0, 1.0) * 255.0));
    return r;
}

ScribbleMap raster_to_scribble(const Raster& r) {
    check_raster(r);
    if (r.channels != 1) throw IoError("scribble must be 8-bit grayscale, got " + std::to_string(r.channels) + " channels");
    ScribbleMap m(r.height, r.width);
    for (std::size_t k = 0; k < r.pixels.size(); ++k)
        m.labels()[k] = r.pixels[k] == 255 ? Label::target : r.pixels[k] == 0 ? Label::background : Label::unknown;
    return m;
}

Raster scribble_to_raster(const ScribbleMap& m) {
    Raster r{1, m.height(), m.width(), std::vector<std::uint8_t>(m.labels().size())};
    for (std::size_t k = 0; k < r.pixels.size(); ++k)
        r.pixels[k] = m.labels()[k] == Label::target ? 255 : m.labels()[k] == Label::background ? 0 : 128;
    return r;
}

Grid raster_to_mask(const Raster& r) {
    check_raster(r);
    if (r.channels != 1) throw IoError("mask must be 8-bit grayscale, got " + std::to_string(r.channels) + " channels");
    Grid g(Shape{r.height, r.width});
    for (std::size_t k = 0; k < r.pixels.size(); ++k) g[k] = r.pixels[k] >= 128 ? 1.0 : 0.0;
    return g;
}

Raster mask_to_raster(const Grid& mask) {
    if (mask.rank() != 2) throw ShapeError("mask_to_raster: expected H x W, got " + to_string(mask.shape()));
    Raster r{1, mask.dim(0), mask.dim(1), std::vector<std::uint8_t>(mask.size())};
    for (std::size_t k = 0; k < mask.size(); ++k) r.pixels[k] = mask[k] >= 0.5 ? 255 : 0;
    return r;
}

Sample load_sample(const fs::path& image, const fs::path& scribble, const std::optional<fs::path>& gt, std::string id) {
    Sample s;
    s.image = raster_to_grid(read_raster(image));
    s.scribble = raster_to_scribble(read_raster(scribble));
    const int H = s.image.dim(1), W = s.image.dim(2);
    auto mismatch = [&](const fs::path& p, int h, int w) {
        return IoError("size mismatch: " + image.string() + " is " + std::to_string(H) + "x" + std::to_string(W) + " but " + p.string() + " is " +
                       std::to_string(h) + "x" + std::to_string(w));
    };
    if (s.scribble.height() != H || s.scribble.width() != W) throw mismatch(scribble, s.scribble.height(), s.scribble.width());
    if (gt) {
        s.gt = raster_to_mask(read_raster(*gt));
        if (s.gt->dim(0) != H || s.gt->dim(1) != W) throw mismatch(*gt, s.gt->dim(0), s.gt->dim(1));
    }
    s.id = id.empty() ? image.stem().string() : std::move(id);
    return s;
}

void save_sample(const Sample& s, const fs::path& image, const fs::path& scribble, const std::optional<fs::path>& gt) {
    write_raster(image, grid_to_raster(s.image));
    write_raster(scribble, scribble_to_raster(s.scribble));
    if (gt) {
        if (!s.gt) throw ArgumentError("save_sample: sample '" + s.id + "' has no ground truth to write");
        write_raster(*gt, mask_to_raster(*s.gt));
    }
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    std::vector<ManifestEntry> out;
    std::set<std::string> ids;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (cols.size() < 2 || cols.size() > 4) throw IoError(where + ": expected 2 to 4 tab-separated columns, got " + std::to_string(cols.size()));

        ManifestEntry e;
        e.image = resolve(cols[0]);
        e.scribble = resolve(cols[1]);
        if (cols.size() >= 3 && cols[2] != "-" && !cols[2].empty()) e.gt = resolve(cols[2]);
        e.id = cols.size() == 4 ? cols[3] : fs::path(cols[0]).stem().string();
        for (const fs::path* p : {&e.image, &e.scribble}) {
            if (!fs::exists(*p)) throw IoError(where + ": missing file " + p->string());
        }
        if (e.gt && !fs::exists(*e.gt)) throw IoError(where + ": missing file " + e.gt->string());
        if (!ids.insert(e.id).second) throw IoError(where + ": duplicate id '" + e.id + "'");
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    const fs::path base = path.parent_path();
    auto rel = [&](const fs::path& p) { return (base.empty() ? p : p.lexically_proximate(base)).generic_string(); };
    out << "# image\tscribble\tgt\tid\n";
    for (const auto& e : entries) out << rel(e.image) << '\t' << rel(e.scribble) << '\t' << (e.gt ? rel(*e.gt) : "-") << '\t' << e.id << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Sample> load_dataset(const fs::path& manifest) {
    std::vector<Sample> out;
    for (const auto& e : read_manifest(manifest)) out.push_back(load_sample(e.image, e.scribble, e.gt, e.id));
    return out;
}

void SynthConfig::validate() const {
    if (size < 8) throw ConfigError("synthetic size must be >= 8, got " + std::to_string(size));
    if (channels != 1 && channels != 3) throw ConfigError("synthetic channels must be 1 or 3");
    if (min_blobs < 1 || max_blobs < min_blobs) throw ConfigError("need 1 <= min_blobs <= max_blobs");
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
    if (!(min_blob_fraction < max_blob_fraction)) throw ConfigError("need min_blob_fraction < max_blob_fraction");
}

namespace {

struct Ellipse {
    double cy, cx, a, b, theta;  // semi-axes a (major) >= b, in pixels

    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double u = dx * std::cos(theta) + dy * std::sin(theta);
        const double v = -dx * std::sin(theta) + dy * std::cos(theta);
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

// Pixels visited by a straight segment, sampled at quarter-pixel steps.
std::vector<std::pair<int, int>> rasterize_segment(double y0, double x0, double y1, double x1) {
    std::vector<std::pair<int, int>> out;
    const int steps = std::max(1, static_cast<int>(std::ceil(4 * std::hypot(y1 - y0, x1 - x0))));
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        std::pair<int, int> p{static_cast<int>(std::lround(y0 + t * (y1 - y0))), static_cast<int>(std::lround(x0 + t * (x1 - x0)))};
        if (out.empty() || out.back() != p) out.push_back(p);
    }
    return out;
}

bool all_inside(const std::vector<std::pair<int, int>>& px, int n) {
    return std::all_of(px.begin(), px.end(), [n](auto p) { return p.first >= 0 && p.first < n && p.second >= 0 && p.second < n; });
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Sample generate_scene(const SynthConfig& cfg, RngState& rng, std::string id) {
    cfg.validate();
    const int N = cfg.size;
    const double total = static_cast<double>(N) * N;

    // Blob layout, redrawn until the covered fraction is in range.
    std::vector<Ellipse> blobs;
    Grid gt(Shape{N, N}, 0.0);
    for (int attempt = 0;; ++attempt) {
        if (attempt > 1000) throw NumericError("synthetic generator could not place blobs; check the blob fraction bounds");
        blobs.clear();
        gt.fill(0.0);
        const int want = cfg.min_blobs + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_blobs - cfg.min_blobs + 1)));
        for (int tries = 0; tries < 50 && static_cast<int>(blobs.size()) < want; ++tries) {
            const double a = rng.uniform(0.12, 0.22) * N;
            Ellipse e{rng.uniform(0.15, 0.85) * N, rng.uniform(0.15, 0.85) * N, a, a * rng.uniform(0.55, 1.0), rng.uniform(0.0, std::numbers::pi)};
            bool clear = true;
            for (int i = 0; i < N && clear; ++i)
                for (int j = 0; j < N && clear; ++j) {
                    if (!e.contains(i, j)) continue;
                    // two-pixel gap to existing blobs keeps them separate components
                    for (int di = -2; di <= 2 && clear; ++di)
                        for (int dj = -2; dj <= 2 && clear; ++dj) {
                            const int y = i + di, x = j + dj;
                            if (y >= 0 && y < N && x >= 0 && x < N && gt.at(y, x) > 0) clear = false;
                        }
                }
            if (!clear) continue;
            blobs.push_back(e);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < N; ++j)
                    if (e.contains(i, j)) gt.at(i, j) = 1.0;
        }
        double covered = 0;
        for (double v : gt.data()) covered += v;
        if (!blobs.empty() && covered / total >= cfg.min_blob_fraction && covered / total <= cfg.max_blob_fraction) break;
    }

    // Intensity layers: background, distractor strips, then blobs on top.
    Grid level(Shape{N, N}, cfg.background_mean);
    std::vector<std::vector<std::pair<int, int>>> strips;
    if (rng.uniform() < cfg.distractor_probability) {
        const int count = 1 + static_cast<int>(rng.below(2));
        for (int s = 0; s < count; ++s) {
            const double len = rng.uniform(0.4, 0.7) * N, ang = rng.uniform(0.0, std::numbers::pi);
            const double cy = rng.uniform(0.2, 0.8) * N, cx = rng.uniform(0.2, 0.8) * N;
            const int half_width = static_cast<int>(rng.below(2));  // strip is 1 or 3 pixels thick
            const double dy = std::sin(ang) * len / 2, dx = std::cos(ang) * len / 2;
            std::vector<std::pair<int, int>> px;
            for (auto [i, j] : rasterize_segment(cy - dy, cx - dx, cy + dy, cx + dx))
                for (int o = -half_width; o <= half_width; ++o) {
                    const bool steep = std::abs(dy) > std::abs(dx);
                    const int y = steep ? i : i + o, x = steep ? j + o : j;
                    if (y >= 0 && y < N && x >= 0 && x < N) px.emplace_back(y, x);
                }
            for (auto [i, j] : px) level.at(i, j) = cfg.distractor_mean;
            strips.push_back(std::move(px));
        }
    }
    for (int k = 0; k < N * N; ++k)
        if (gt[k] > 0) level[k] = cfg.blob_mean;

    Grid image(Shape{cfg.channels, N, N});
    for (int c = 0; c < cfg.channels; ++c)
        for (int k = 0; k < N * N; ++k) {
            const double v = clamp01(level[k] + cfg.noise_sigma * rng.normal());
            image[c * N * N + k] = std::round(v * 255.0) / 255.0;
        }

    ScribbleMap scribble(N, N);
    // Target: a segment along each blob's major axis, shortened until it stays inside.
    for (const Ellipse& e : blobs) {
        for (double t = 0.7; t > 0.05; t *= 0.8) {
            const double dy = std::sin(e.theta) * e.a * t, dx = std::cos(e.theta) * e.a * t;
            auto px = rasterize_segment(e.cy - dy, e.cx - dx, e.cy + dy, e.cx + dx);
            if (!all_inside(px, N)) continue;
            if (!std::all_of(px.begin(), px.end(), [&](auto p) { return gt.at(p.first, p.second) > 0; })) continue;
            for (auto [i, j] : px) scribble.at(i, j) = Label::target;
            break;
        }
    }
    // Background: one segment at least two pixels from every blob. When a
    // distractor strip exists the segment is anchored on it, the way an
    // annotator would mark clutter as background.
    Grid near_blob(Shape{N, N}, 0.0);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            for (int di = -2; di <= 2; ++di)
                for (int dj = -2; dj <= 2; ++dj) {
                    const int y = i + di, x = j + dj;
                    if (y >= 0 && y < N && x >= 0 && x < N && gt.at(y, x) > 0) near_blob.at(i, j) = 1.0;
                }
    std::vector<std::pair<int, int>> anchors;
    for (const auto& s : strips)
        for (auto p : s)
            if (near_blob.at(p.first, p.second) == 0) anchors.push_back(p);
    bool placed = false;
    for (int tries = 0; tries < 500 && !placed; ++tries) {
        double cy, cx;
        if (!anchors.empty() && tries < 250) {
            auto p = anchors[rng.below(anchors.size())];
            cy = p.first, cx = p.second;
        } else {
            cy = rng.uniform(0, N - 1), cx = rng.uniform(0, N - 1);
        }
        const double len = rng.uniform(0.25, 0.5) * N, ang = rng.uniform(0.0, std::numbers::pi);
        const double dy = std::sin(ang) * len / 2, dx = std::cos(ang) * len / 2;
        auto px = rasterize_segment(cy - dy, cx - dx, cy + dy, cx + dx);
        if (!all_inside(px, N)) continue;
        if (std::any_of(px.begin(), px.end(), [&](auto p) { return near_blob.at(p.first, p.second) > 0; })) continue;
        for (auto [i, j] : px) scribble.at(i, j) = Label::background;
        placed = true;
    }
    if (!placed) {
        // fall back to every blob-free pixel of the emptiest row
        int best_row = 0;
        std::size_t best = 0;
        for (int i = 0; i < N; ++i) {
            std::size_t free = 0;
            for (int j = 0; j < N; ++j) free += near_blob.at(i, j) == 0;
            if (free > best) best = free, best_row = i;
        }
        for (int j = 0; j < N; ++j)
            if (near_blob.at(best_row, j) == 0) scribble.at(best_row, j) = Label::background;
    }
    scribble.require_both_classes("synthetic scene '" + id + "'");
    return {std::move(image), std::move(scribble), std::move(gt), std::move(id)};
}

std::vector<ManifestEntry> generate_synthetic(int count, const SynthConfig& cfg, RngState rng, const fs::path& out_dir) {
    if (count < 1) throw ArgumentError("synthetic count must be >= 1, got " + std::to_string(count));
    cfg.validate();
    for (const char* sub : {"images", "scribbles", "gt"}) fs::create_directories(out_dir / sub);
    std::vector<ManifestEntry> entries;
    const int digits = std::max(3, static_cast<int>(std::to_string(count - 1).size()));
    for (int k = 0; k < count; ++k) {
        std::string id = std::to_string(k);
        id = "scene_" + std::string(static_cast<std::size_t>(digits) - id.size(), '0') + id;
        // each scene draws from its own stream so scene k does not depend on count
        RngState scene_rng = rng.split(static_cast<std::uint64_t>(k));
        Sample s = generate_scene(cfg, scene_rng, id);
        const std::string ext = cfg.channels == 3 ? ".ppm" : ".pgm";
        ManifestEntry e{out_dir / "images" / (id + ext), out_dir / "scribbles" / (id + ".pgm"), out_dir / "gt" / (id + ".pgm"), id};
        save_sample(s, e.image, e.scribble, e.gt);
        entries.push_back(std::move(e));
    }
    write_manifest(out_dir / "manifest.tsv", entries);
    return entries;
}

CropWindow draw_crop(int height, int width, int crop, RngState& rng) {
    if (crop < 1 || crop > height || crop > width) {
        throw ArgumentError("crop " + std::to_string(crop) + " does not fit a " + std::to_string(height) + "x" + std::to_string(width) + " frame");
    }
    const int top = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - crop + 1)));
    const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - crop + 1)));
    return {top, left};
}

Sample crop_sample(const Sample& s, CropWindow w, int crop) {
    const int C = s.image.dim(0), H = s.image.dim(1), W = s.image.dim(2);
    if (w.top < 0 || w.left < 0 || w.top + crop > H || w.left + crop > W) throw ArgumentError("crop window exceeds the frame");
    Sample out;
    out.image = Grid(Shape{C, crop, crop});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < crop; ++i)
            for (int j = 0; j < crop; ++j) out.image.at(c, i, j) = s.image.at(c, w.top + i, w.left + j);
    out.scribble = s.scribble.crop(w.top, w.left, crop, crop);
    if (s.gt) {
        Grid g(Shape{crop, crop});
        for (int i = 0; i < crop; ++i)
            for (int j = 0; j < crop; ++j) g.at(i, j) = s.gt->at(w.top + i, w.left + j);
        out.gt = std::move(g);
    }
    out.id = s.id;
    return out;
}

Sample random_crop(const Sample& s, int crop, RngState& rng) { return crop_sample(s, draw_crop(s.image.dim(1), s.image.dim(2), crop, rng), crop); }

}  // namespace scribble::data
