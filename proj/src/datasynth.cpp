#include "skipdet/datasynth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace skipdet::data {

namespace {

float intersection_area(const Box& a, const Box& b) {
    float ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    float iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    return ix > 0 && iy > 0 ? ix * iy : 0.0f;
}

std::uint8_t clamp_u8(float v) {
    return std::uint8_t(std::clamp(v, 0.0f, 255.0f));
}

void render_background(Image& img, const SceneSpec& spec, Rng& rng) {
    float base = float(rng.uniform(40.0, 90.0));
    float amp = float(rng.uniform(0.0, 30.0));
    float dx = float(rng.uniform(-1.0, 1.0));
    float dy = float(rng.uniform(-1.0, 1.0));
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            float g = amp * (dx * float(x) / float(img.w) + dy * float(y) / float(img.h));
            float n = float(rng.normal()) * spec.noise_stddev;
            img.at(y, x) = clamp_u8(base + g + n);
        }
}

// Renders one object and returns its tight pixel-scan bounding box, or
// nullopt when no non-overlapping placement was found.
std::optional<GroundTruthBox> render_object(Image& img, const SceneSpec& spec, Rng& rng,
                                            const std::vector<GroundTruthBox>& placed) {
    int max_px = spec.resolved_max_object_px();
    for (int attempt = 0; attempt < 50; ++attempt) {
        int cls = rng.uniform_int(1, spec.num_classes);
        int sw = rng.uniform_int(spec.min_object_px, max_px);
        int sh = cls == 1 ? sw : rng.uniform_int(spec.min_object_px, max_px);
        int x0 = rng.uniform_int(0, img.w - sw);
        int y0 = rng.uniform_int(0, img.h - sh);
        Box cand{float(x0), float(y0), float(x0 + sw), float(y0 + sh)};
        bool clash = false;
        for (const auto& p : placed)
            if (intersection_area(cand, p.box) > 0.0f) clash = true;
        if (clash) continue;

        float bright = float(rng.uniform(170.0, 230.0));
        int minx = img.w, miny = img.h, maxx = -1, maxy = -1;
        if (cls == 1) {
            // disc: fill pixels whose centers fall inside the circle
            float r = float(sw) / 2.0f;
            float ccx = float(x0) + r, ccy = float(y0) + r;
            for (int y = y0; y < y0 + sh; ++y)
                for (int x = x0; x < x0 + sw; ++x) {
                    float px = float(x) + 0.5f - ccx, py = float(y) + 0.5f - ccy;
                    if (px * px + py * py <= r * r) {
                        img.at(y, x) = clamp_u8(bright + 3.0f * float(rng.normal()));
                        minx = std::min(minx, x);
                        maxx = std::max(maxx, x);
                        miny = std::min(miny, y);
                        maxy = std::max(maxy, y);
                    }
                }
        } else {
            for (int y = y0; y < y0 + sh; ++y)
                for (int x = x0; x < x0 + sw; ++x)
                    img.at(y, x) = clamp_u8(bright + 3.0f * float(rng.normal()));
            minx = x0;
            maxx = x0 + sw - 1;
            miny = y0;
            maxy = y0 + sh - 1;
        }
        if (maxx < 0) continue;  // nothing rendered (cannot happen at >= 8 px)
        return GroundTruthBox{cls,
                              {float(minx), float(miny), float(maxx + 1), float(maxy + 1)}};
    }
    return std::nullopt;
}

AnnotatedImage render_scene(const SceneSpec& spec, std::uint64_t scene_seed, bool want_empty) {
    Rng rng(scene_seed);
    AnnotatedImage out;
    out.image = Image(spec.height, spec.width);
    render_background(out.image, spec, rng);
    if (want_empty) return out;
    int count = rng.uniform_int(spec.min_objects, spec.max_objects);
    for (int i = 0; i < count; ++i)
        if (auto gt = render_object(out.image, spec, rng, out.boxes)) out.boxes.push_back(*gt);
    return out;
}

Image crop_pixels(const Image& src, int x0, int y0, int cw, int ch) {
    Image out(ch, cw);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) out.at(y, x) = src.at(y0 + y, x0 + x);
    return out;
}

}  // namespace

void SceneSpec::validate() const {
    if (height < 16 || width < 16) throw std::invalid_argument("SceneSpec: canvas too small");
    if (empty_fraction < 0.0f || empty_fraction > 1.0f)
        throw std::invalid_argument("SceneSpec: empty_fraction outside [0,1]");
    if (num_classes < 1 || num_classes > 2)
        throw std::invalid_argument("SceneSpec: num_classes must be 1 or 2");
    if (min_object_px < 8)
        throw std::invalid_argument("SceneSpec: objects below the 8 px detectable minimum");
    int max_px = resolved_max_object_px();
    if (max_px < min_object_px) throw std::invalid_argument("SceneSpec: max_object_px < min");
    if (min_objects < 1 || max_objects < min_objects)
        throw std::invalid_argument("SceneSpec: bad object count range");
    if (1LL * max_objects * max_px * max_px > 1LL * height * width)
        throw std::invalid_argument("SceneSpec: object budget exceeds canvas area");
}

int SceneSpec::resolved_max_object_px() const {
    return max_object_px > 0 ? max_object_px : std::min(height, width) / 3;
}

Dataset generate_dataset(const SceneSpec& spec, int n_images, std::uint64_t seed) {
    spec.validate();
    if (n_images <= 0) throw std::invalid_argument("generate_dataset: n_images must be positive");

    // deterministic choice of which frames are empty
    int n_empty = int(std::lround(double(n_images) * double(spec.empty_fraction)));
    std::vector<int> order(static_cast<std::size_t>(n_images));
    for (int i = 0; i < n_images; ++i) order[std::size_t(i)] = i;
    Rng shuffle_rng = Rng(seed).fork("empty-assignment");
    for (int i = n_images - 1; i > 0; --i)
        std::swap(order[std::size_t(i)], order[std::size_t(shuffle_rng.uniform_int(0, i))]);
    std::vector<bool> is_empty(std::size_t(n_images), false);
    for (int i = 0; i < n_empty; ++i) is_empty[std::size_t(order[std::size_t(i)])] = true;

    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.items.reserve(std::size_t(n_images));
    for (int i = 0; i < n_images; ++i)
        ds.items.push_back(render_scene(spec, seed ^ std::uint64_t(i), is_empty[std::size_t(i)]));
    return ds;
}

std::optional<Crop> sample_negative_crop(const Image& image,
                                         const std::vector<GroundTruthBox>& boxes, Rng& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        double frac = rng.uniform(0.42, 0.70);
        double s = std::sqrt(frac);
        int cw = int(std::floor(double(image.w) * s));
        int ch = int(std::floor(double(image.h) * s));
        if (cw < 1 || ch < 1) continue;
        double actual = double(cw) * double(ch) / (double(image.w) * double(image.h));
        if (actual < 0.40 || actual > 0.70) continue;
        int x0 = rng.uniform_int(0, image.w - cw);
        int y0 = rng.uniform_int(0, image.h - ch);
        Box rect{float(x0), float(y0), float(x0 + cw), float(y0 + ch)};
        bool clean = true;
        for (const auto& gt : boxes)
            if (intersection_area(rect, gt.box) > 0.0f) clean = false;
        if (!clean) continue;
        return Crop{rect, crop_pixels(image, x0, y0, cw, ch), {}};
    }
    return std::nullopt;
}

Crop sample_positive_crop(const Image& image, const std::vector<GroundTruthBox>& boxes, Rng& rng,
                          float min_retention) {
    if (boxes.empty()) throw std::invalid_argument("sample_positive_crop: no boxes");
    const GroundTruthBox& target = boxes[std::size_t(rng.uniform_int(0, int(boxes.size()) - 1))];
    double frac = rng.uniform(0.42, 0.70);
    double s = std::sqrt(frac);
    int cw = int(std::floor(double(image.w) * s));
    int ch = int(std::floor(double(image.h) * s));
    // grow until the chosen box fits
    cw = std::min(image.w, std::max(cw, int(std::ceil(target.box.xmax)) -
                                            int(std::floor(target.box.xmin))));
    ch = std::min(image.h, std::max(ch, int(std::ceil(target.box.ymax)) -
                                            int(std::floor(target.box.ymin))));
    int xlo = std::max(0, int(std::ceil(target.box.xmax)) - cw);
    int xhi = std::min(image.w - cw, int(std::floor(target.box.xmin)));
    int ylo = std::max(0, int(std::ceil(target.box.ymax)) - ch);
    int yhi = std::min(image.h - ch, int(std::floor(target.box.ymin)));
    int x0 = rng.uniform_int(xlo, std::max(xlo, xhi));
    int y0 = rng.uniform_int(ylo, std::max(ylo, yhi));

    Crop out;
    out.rect = Box{float(x0), float(y0), float(x0 + cw), float(y0 + ch)};
    out.image = crop_pixels(image, x0, y0, cw, ch);
    for (const auto& gt : boxes) {
        Box c{std::max(gt.box.xmin, out.rect.xmin), std::max(gt.box.ymin, out.rect.ymin),
              std::min(gt.box.xmax, out.rect.xmax), std::min(gt.box.ymax, out.rect.ymax)};
        if (c.xmax <= c.xmin || c.ymax <= c.ymin) continue;
        if (c.area() < min_retention * gt.box.area()) continue;
        out.boxes.push_back(
            {gt.class_id, {c.xmin - float(x0), c.ymin - float(y0), c.xmax - float(x0),
                           c.ymax - float(y0)}});
    }
    return out;
}

Box Letterboxed::to_target(const Box& b) const {
    return {b.xmin * scale + pad_x, b.ymin * scale + pad_y, b.xmax * scale + pad_x,
            b.ymax * scale + pad_y};
}

Box Letterboxed::to_source(const Box& b) const {
    return {(b.xmin - pad_x) / scale, (b.ymin - pad_y) / scale, (b.xmax - pad_x) / scale,
            (b.ymax - pad_y) / scale};
}

Letterboxed letterbox(const Image& image, int target_h, int target_w) {
    if (target_h <= 0 || target_w <= 0) throw std::invalid_argument("letterbox: bad target size");
    Letterboxed out;
    out.scale = std::min(float(target_h) / float(image.h), float(target_w) / float(image.w));
    int sw = int(std::lround(double(image.w) * double(out.scale)));
    int sh = int(std::lround(double(image.h) * double(out.scale)));
    int x_off = (target_w - sw) / 2;
    int y_off = (target_h - sh) / 2;
    out.pad_x = float(x_off);
    out.pad_y = float(y_off);
    out.image = Image(target_h, target_w, 128);
    // bilinear resample with pixel-center alignment
    for (int y = 0; y < sh; ++y) {
        float sy = (float(y) + 0.5f) / out.scale - 0.5f;
        sy = std::clamp(sy, 0.0f, float(image.h - 1));
        int y0 = int(sy);
        int y1 = std::min(y0 + 1, image.h - 1);
        float fy = sy - float(y0);
        for (int x = 0; x < sw; ++x) {
            float sx = (float(x) + 0.5f) / out.scale - 0.5f;
            sx = std::clamp(sx, 0.0f, float(image.w - 1));
            int x0 = int(sx);
            int x1 = std::min(x0 + 1, image.w - 1);
            float fx = sx - float(x0);
            float v = (1 - fy) * ((1 - fx) * float(image.at(y0, x0)) + fx * float(image.at(y0, x1))) +
                      fy * ((1 - fx) * float(image.at(y1, x0)) + fx * float(image.at(y1, x1)));
            out.image.at(y + y_off, x + x_off) = clamp_u8(std::round(v));
        }
    }
    return out;
}

std::vector<Tile> tile_image(const Image& image, const std::vector<GroundTruthBox>& boxes,
                             int tile_h, int tile_w, float min_retention) {
    if (tile_h <= 0 || tile_w <= 0) throw std::invalid_argument("tile_image: bad tile size");
    if (image.h % tile_h != 0 || image.w % tile_w != 0)
        throw std::invalid_argument(
            "tile_image: image not divisible by tile size; pad to " +
            std::to_string((image.h + tile_h - 1) / tile_h * tile_h) + "x" +
            std::to_string((image.w + tile_w - 1) / tile_w * tile_w));
    std::vector<Tile> out;
    for (int ty = 0; ty < image.h / tile_h; ++ty)
        for (int tx = 0; tx < image.w / tile_w; ++tx) {
            Tile t;
            t.row = ty;
            t.col = tx;
            t.image = crop_pixels(image, tx * tile_w, ty * tile_h, tile_w, tile_h);
            Box rect{float(tx * tile_w), float(ty * tile_h), float((tx + 1) * tile_w),
                     float((ty + 1) * tile_h)};
            for (const auto& gt : boxes) {
                Box c{std::max(gt.box.xmin, rect.xmin), std::max(gt.box.ymin, rect.ymin),
                      std::min(gt.box.xmax, rect.xmax), std::min(gt.box.ymax, rect.ymax)};
                if (c.xmax <= c.xmin || c.ymax <= c.ymin) continue;
                if (c.area() < min_retention * gt.box.area()) continue;
                t.boxes.push_back({gt.class_id,
                                   {c.xmin - rect.xmin, c.ymin - rect.ymin, c.xmax - rect.xmin,
                                    c.ymax - rect.ymin}});
            }
            out.push_back(std::move(t));
        }
    return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    nlohmann::json ann = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05zu.png", i);
        write_png_gray(dir / "images" / name, ds.items[i].image);
        nlohmann::json boxes = nlohmann::json::array();
        for (const auto& gt : ds.items[i].boxes)
            boxes.push_back({{"class", gt.class_id},
                             {"xmin", gt.box.xmin},
                             {"ymin", gt.box.ymin},
                             {"xmax", gt.box.xmax},
                             {"ymax", gt.box.ymax}});
        ann.push_back({{"file", std::string("images/") + name}, {"boxes", boxes}});
    }
    std::ofstream(dir / "annotations.json") << ann.dump(1) << '\n';
    nlohmann::json manifest{{"n_images", ds.items.size()},
                            {"seed", ds.seed},
                            {"height", ds.spec.height},
                            {"width", ds.spec.width},
                            {"num_classes", ds.spec.num_classes},
                            {"min_objects", ds.spec.min_objects},
                            {"max_objects", ds.spec.max_objects},
                            {"empty_fraction", ds.spec.empty_fraction},
                            {"min_object_px", ds.spec.min_object_px},
                            {"max_object_px", ds.spec.max_object_px},
                            {"noise_stddev", ds.spec.noise_stddev}};
    std::ofstream(dir / "manifest.json") << manifest.dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("load_dataset: missing manifest in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(mf);
    Dataset ds;
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.spec.height = manifest.at("height").get<int>();
    ds.spec.width = manifest.at("width").get<int>();
    ds.spec.num_classes = manifest.at("num_classes").get<int>();
    ds.spec.min_objects = manifest.at("min_objects").get<int>();
    ds.spec.max_objects = manifest.at("max_objects").get<int>();
    ds.spec.empty_fraction = manifest.at("empty_fraction").get<float>();
    ds.spec.min_object_px = manifest.at("min_object_px").get<int>();
    ds.spec.max_object_px = manifest.at("max_object_px").get<int>();
    ds.spec.noise_stddev = manifest.at("noise_stddev").get<float>();

    std::ifstream af(dir / "annotations.json");
    if (!af) throw std::runtime_error("load_dataset: missing annotations in " + dir.string());
    nlohmann::json ann = nlohmann::json::parse(af);
    for (const auto& entry : ann) {
        AnnotatedImage item;
        item.image = read_png_gray(dir / entry.at("file").get<std::string>());
        for (const auto& b : entry.at("boxes"))
            item.boxes.push_back({b.at("class").get<int>(),
                                  {b.at("xmin").get<float>(), b.at("ymin").get<float>(),
                                   b.at("xmax").get<float>(), b.at("ymax").get<float>()}});
        ds.items.push_back(std::move(item));
    }
    return ds;
}

}  // namespace skipdet::data
