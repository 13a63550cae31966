#include "xdepict/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "xdepict/container.hpp"
#include "xdepict/error.hpp"
#include "xdepict/rng.hpp"

namespace xdepict {

namespace {

using json = nlohmann::ordered_json;
constexpr double kPi = std::numbers::pi;

Stroke line(Point a, Point b) { return Stroke::polyline({a, b}); }

std::vector<MotifClass> build_library() {
    using S = Stroke;
    std::vector<MotifClass> lib;
    lib.push_back({"bulls-head",
                   {S::polyline({{0.35, 0.36}, {0.32, 0.56}, {0.40, 0.76}, {0.50, 0.84}, {0.60, 0.76}, {0.68, 0.56},
                                 {0.65, 0.36}, {0.35, 0.36}}),
                    S::polyline({{0.35, 0.38}, {0.22, 0.32}, {0.17, 0.18}}),
                    S::polyline({{0.65, 0.38}, {0.78, 0.32}, {0.83, 0.18}}), S::circle({0.43, 0.50}, 0.035),
                    S::circle({0.57, 0.50}, 0.035), line({0.50, 0.36}, {0.50, 0.08}),
                    line({0.42, 0.15}, {0.58, 0.15})}});
    lib.push_back({"letter-p",
                   {line({0.38, 0.14}, {0.38, 0.88}), line({0.38, 0.14}, {0.48, 0.14}),
                    S::arc({0.48, 0.31}, 0.17, -kPi / 2, kPi / 2), line({0.48, 0.48}, {0.38, 0.48}),
                    line({0.28, 0.70}, {0.48, 0.70})}});
    lib.push_back({"crown",
                   {line({0.18, 0.76}, {0.82, 0.76}),
                    S::polyline({{0.20, 0.76}, {0.20, 0.36}, {0.35, 0.56}, {0.50, 0.28}, {0.65, 0.56}, {0.80, 0.36},
                                 {0.80, 0.76}}),
                    S::circle({0.20, 0.30}, 0.04), S::circle({0.50, 0.22}, 0.04), S::circle({0.80, 0.30}, 0.04),
                    line({0.22, 0.66}, {0.78, 0.66})}});
    lib.push_back({"unicorn",
                   {S::polyline({{0.22, 0.52}, {0.64, 0.52}, {0.72, 0.38}, {0.80, 0.34}, {0.87, 0.42}, {0.78, 0.47},
                                 {0.68, 0.60}, {0.26, 0.62}, {0.22, 0.52}}),
                    line({0.80, 0.34}, {0.92, 0.12}), line({0.30, 0.62}, {0.27, 0.88}),
                    line({0.40, 0.62}, {0.42, 0.88}), line({0.58, 0.61}, {0.56, 0.88}),
                    line({0.66, 0.60}, {0.71, 0.88}), S::arc({0.16, 0.46}, 0.08, -kPi / 2, kPi / 2)}});
    lib.push_back({"grape",
                   {S::circle({0.38, 0.38}, 0.07), S::circle({0.52, 0.38}, 0.07), S::circle({0.66, 0.38}, 0.07),
                    S::circle({0.45, 0.51}, 0.07), S::circle({0.59, 0.51}, 0.07), S::circle({0.52, 0.64}, 0.07),
                    line({0.52, 0.31}, {0.52, 0.12}), S::arc({0.62, 0.20}, 0.09, kPi * 0.75, kPi * 1.75)}});
    lib.push_back({"triple-mount",
                   {line({0.10, 0.72}, {0.90, 0.72}), S::arc({0.28, 0.72}, 0.16, kPi, 2 * kPi),
                    S::arc({0.72, 0.72}, 0.16, kPi, 2 * kPi), S::arc({0.50, 0.58}, 0.16, kPi, 2 * kPi),
                    line({0.50, 0.42}, {0.50, 0.12}), line({0.41, 0.20}, {0.59, 0.20})}});
    lib.push_back({"horn",
                   {S::arc({0.50, 0.40}, 0.32, kPi * 0.15, kPi * 0.85), S::arc({0.50, 0.40}, 0.20, kPi * 0.2, kPi * 0.8),
                    line({0.78, 0.55}, {0.89, 0.44}), line({0.22, 0.55}, {0.33, 0.55}),
                    S::polyline({{0.30, 0.52}, {0.40, 0.20}, {0.60, 0.20}, {0.70, 0.52}})}});
    lib.push_back({"tower",
                   {S::polyline({{0.35, 0.86}, {0.35, 0.36}, {0.65, 0.36}, {0.65, 0.86}, {0.35, 0.86}}),
                    S::polyline({{0.30, 0.36}, {0.30, 0.20}, {0.40, 0.20}, {0.40, 0.28}, {0.47, 0.28}, {0.47, 0.20},
                                 {0.53, 0.20}, {0.53, 0.28}, {0.60, 0.28}, {0.60, 0.20}, {0.70, 0.20}, {0.70, 0.36}}),
                    S::arc({0.50, 0.86}, 0.08, kPi, 2 * kPi), S::circle({0.50, 0.52}, 0.045)}});
    lib.push_back({"circle",
                   {S::circle({0.50, 0.50}, 0.32), S::circle({0.50, 0.50}, 0.09), line({0.50, 0.18}, {0.50, 0.41}),
                    line({0.50, 0.59}, {0.50, 0.82}), line({0.18, 0.50}, {0.41, 0.50}),
                    line({0.59, 0.50}, {0.82, 0.50})}});
    return lib;
}

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

double segment_distance(Point p, Point a, Point b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

// Distance in pixels from p to a primitive already scaled to pixel units.
double stroke_distance(Point p, const Stroke& s) {
    switch (s.kind) {
        case Stroke::Kind::polyline: {
            if (s.points.size() == 1) return std::hypot(p.x - s.points[0].x, p.y - s.points[0].y);
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i + 1 < s.points.size(); ++i) {
                best = std::min(best, segment_distance(p, s.points[i], s.points[i + 1]));
            }
            return best;
        }
        case Stroke::Kind::circle:
            return std::abs(std::hypot(p.x - s.center.x, p.y - s.center.y) - s.radius);
        case Stroke::Kind::arc: {
            double t = std::atan2(p.y - s.center.y, p.x - s.center.x);
            while (t < s.start) t += 2 * kPi;
            while (t >= s.start + 2 * kPi) t -= 2 * kPi;
            if (t <= s.end) return std::abs(std::hypot(p.x - s.center.x, p.y - s.center.y) - s.radius);
            const Point a{s.center.x + s.radius * std::cos(s.start), s.center.y + s.radius * std::sin(s.start)};
            const Point b{s.center.x + s.radius * std::cos(s.end), s.center.y + s.radius * std::sin(s.end)};
            return std::min(std::hypot(p.x - a.x, p.y - a.y), std::hypot(p.x - b.x, p.y - b.y));
        }
    }
    return std::numeric_limits<double>::infinity();
}

Point jitter_point(Point p, double scale, Rng& rng) {
    return {std::clamp(p.x + rng.normal(0.0, scale), 0.0, 1.0), std::clamp(p.y + rng.normal(0.0, scale), 0.0, 1.0)};
}

std::string sample_id_for(const std::string& class_name, int instance_id, const std::string& style) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", instance_id);
    return class_name + "_" + buf + "_" + style;
}

void validate_ratios(const SplitRatios& r) {
    if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-6) {
        throw Error("split ratios must be non-negative and sum to 1");
    }
}

}  // namespace

Stroke Stroke::polyline(std::vector<Point> pts) {
    Stroke s;
    s.kind = Kind::polyline;
    s.points = std::move(pts);
    return s;
}

Stroke Stroke::arc(Point c, double r, double start, double end) {
    Stroke s;
    s.kind = Kind::arc;
    s.center = c;
    s.radius = r;
    s.start = start;
    s.end = end;
    return s;
}

Stroke Stroke::circle(Point c, double r) {
    Stroke s;
    s.kind = Kind::circle;
    s.center = c;
    s.radius = r;
    return s;
}

const std::vector<MotifClass>& motif_library() {
    static const std::vector<MotifClass> lib = build_library();
    return lib;
}

std::vector<Stroke> instance_strokes(const InstanceSpec& instance) {
    const auto& lib = motif_library();
    if (instance.class_index < 0 || instance.class_index >= static_cast<int>(lib.size())) {
        throw Error("class index " + std::to_string(instance.class_index) + " is outside the motif library");
    }
    Rng rng(instance.jitter_seed);
    std::vector<Stroke> strokes = lib[static_cast<std::size_t>(instance.class_index)].program;
    for (auto& s : strokes) {
        for (auto& p : s.points) p = jitter_point(p, instance.jitter, rng);
        if (s.kind != Stroke::Kind::polyline) {
            s.center = jitter_point(s.center, instance.jitter, rng);
            s.radius = std::max(0.01, s.radius + rng.normal(0.0, instance.jitter / 2));
        }
    }
    return strokes;
}

void DepictionStyle::validate() const {
    if (stroke_width <= 0 || blur_sigma < 0 || noise < 0 || contrast <= 0 || background_level <= 0 ||
        background_level > 1) {
        throw Error("depiction style '" + name + "' has out-of-range parameters");
    }
}

DepictionStyle trace_style() { return {"trace", 2.0, 0.4, 0.0, Background::flat, 1.0, 1.0}; }
DepictionStyle rubbing_style() { return {"rubbing", 4.0, 1.5, 0.15, Background::grain, 0.6, 0.5}; }
DepictionStyle radiography_style() { return {"radiography", 3.0, 2.5, 0.08, Background::gradient, 0.55, 0.35}; }

const std::vector<DepictionStyle>& default_styles() {
    static const std::vector<DepictionStyle> styles{trace_style(), rubbing_style(), radiography_style()};
    return styles;
}

const DepictionStyle& style_by_name(std::string_view name) {
    for (const auto& s : default_styles()) {
        if (s.name == name) return s;
    }
    throw Error("unknown depiction style '" + std::string(name) + "' (expected trace, rubbing or radiography)");
}

FloatImage rasterize_strokes(std::span<const Stroke> strokes, double width_px, int size) {
    if (width_px < 1.0) throw Error("stroke width must be at least 1 px");
    FloatImage out(size, size, 0.0f);
    const double half = width_px / 2.0;
    for (const auto& unit : strokes) {
        Stroke s = unit;
        for (auto& p : s.points) p = {p.x * size, p.y * size};
        s.center = {s.center.x * size, s.center.y * size};
        s.radius *= size;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double d = stroke_distance({x + 0.5, y + 0.5}, s);
                const auto cover = static_cast<float>(1.0 - smoothstep(half - 0.5, half + 0.5, d));
                out.at(x, y) = std::max(out.at(x, y), cover);
            }
        }
    }
    return out;
}

GrayImage render_motif(const InstanceSpec& instance, const DepictionStyle& style, int size,
                       std::uint64_t render_seed) {
    style.validate();
    const auto strokes = instance_strokes(instance);
    const auto coverage = gaussian_blur(rasterize_strokes(strokes, style.stroke_width, size), style.blur_sigma);
    Rng rng(render_seed);
    FloatImage page(size, size, static_cast<float>(style.background_level));
    if (style.background == Background::gradient) {
        const double angle = rng.uniform(0.0, 2 * kPi);
        const double phase = rng.uniform(0.0, 2 * kPi);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double u = (x + 0.5) / size - 0.5, v = (y + 0.5) / size - 0.5;
                const double along = u * std::cos(angle) + v * std::sin(angle);
                page.at(x, y) += static_cast<float>(0.2 * along + 0.05 * std::sin(2 * kPi * 1.5 * along + phase));
            }
        }
    }
    for (std::size_t i = 0; i < page.values.size(); ++i) {
        double v = page.values[i] - style.contrast * coverage.values[i];
        if (style.noise > 0.0) {
            v += style.background == Background::grain ? style.noise * rng.uniform(-1.0, 1.0)
                                                       : rng.normal(0.0, style.noise);
        }
        page.values[i] = static_cast<float>(v);
    }
    return quantize(page);
}

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw Error("unknown split '" + std::string(text) + "' (expected train, val or test)");
}

const SampleRecord& DatasetManifest::find(std::string_view sample_id) const {
    for (const auto& r : records) {
        if (r.sample_id == sample_id) return r;
    }
    throw Error("unknown sample id '" + std::string(sample_id) + "'");
}

bool DatasetManifest::contains(std::string_view sample_id) const {
    return std::any_of(records.begin(), records.end(), [&](const SampleRecord& r) { return r.sample_id == sample_id; });
}

std::vector<std::string> DatasetManifest::ids(Split split) const {
    std::vector<std::string> out;
    for (const auto& r : records) {
        if (r.split == split) out.push_back(r.sample_id);
    }
    return out;
}

std::vector<const SampleRecord*> DatasetManifest::records_in(Split split) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records) {
        if (r.split == split) out.push_back(&r);
    }
    return out;
}

std::array<int, 3> split_counts(int total, const SplitRatios& ratios) {
    validate_ratios(ratios);
    const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
    std::array<int, 3> counts{};
    std::array<double, 3> frac{};
    int assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double raw = r[static_cast<std::size_t>(k)] * total;
        counts[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(raw + 1e-9));
        frac[static_cast<std::size_t>(k)] = raw - counts[static_cast<std::size_t>(k)];
        assigned += counts[static_cast<std::size_t>(k)];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b] + 1e-9; });
    for (int i = 0; assigned < total; ++i, ++assigned) ++counts[static_cast<std::size_t>(order[i % 3])];
    return counts;
}

void split_dataset(DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
    const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
    std::map<int, std::vector<int>> instances_by_class;
    for (const auto& rec : manifest.records) {
        auto& ids = instances_by_class[rec.class_index];
        if (std::find(ids.begin(), ids.end(), rec.instance_id) == ids.end()) ids.push_back(rec.instance_id);
    }
    std::map<int, Split> assignment;
    for (auto& [cls, ids] : instances_by_class) {
        std::sort(ids.begin(), ids.end());
        const auto counts = split_counts(static_cast<int>(ids.size()), ratios);
        for (int k = 0; k < 3; ++k) {
            if (r[static_cast<std::size_t>(k)] > 0 && counts[static_cast<std::size_t>(k)] == 0) {
                throw Error("class '" + manifest.classes.at(static_cast<std::size_t>(cls)) + "' has only " +
                            std::to_string(ids.size()) + " instances, too few for a non-empty " +
                            std::string(to_string(static_cast<Split>(k))) + " split");
            }
        }
        Rng rng(derive_seed(seed, {3, static_cast<std::uint64_t>(cls)}));
        rng.shuffle(ids);
        std::size_t pos = 0;
        for (int k = 0; k < 3; ++k) {
            for (int j = 0; j < counts[static_cast<std::size_t>(k)]; ++j) assignment[ids[pos++]] = static_cast<Split>(k);
        }
    }
    for (auto& rec : manifest.records) rec.split = assignment.at(rec.instance_id);
}

std::vector<double> class_weights(const DatasetManifest& manifest, Split split) {
    const std::size_t k = manifest.num_classes();
    std::vector<std::int64_t> counts(k, 0);
    std::int64_t total = 0;
    for (const auto& r : manifest.records) {
        if (r.split != split) continue;
        ++counts.at(static_cast<std::size_t>(r.class_index));
        ++total;
    }
    if (total == 0) throw Error("class_weights: split '" + std::string(to_string(split)) + "' is empty");
    std::vector<double> w(k);
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) {
            throw Error("class_weights: class '" + manifest.classes[c] + "' has no samples in split '" +
                        std::string(to_string(split)) + "'");
        }
        w[c] = static_cast<double>(total) / (static_cast<double>(k) * static_cast<double>(counts[c]));
    }
    return w;
}

DatasetManifest generate_dataset(const GenerateOptions& options, const std::filesystem::path& out_dir) {
    const auto& lib = motif_library();
    if (options.num_classes < 1 || options.num_classes > static_cast<int>(lib.size())) {
        throw Error("num_classes must be between 1 and " + std::to_string(lib.size()) + ", got " +
                    std::to_string(options.num_classes));
    }
    if (options.instances_per_class < 1) throw Error("instances_per_class must be >= 1");
    if (options.image_size < 8) throw Error("image_size must be >= 8");
    if (options.styles.empty()) throw Error("at least one depiction style is required");
    std::vector<const DepictionStyle*> styles;
    for (const auto& name : options.styles) styles.push_back(&style_by_name(name));

    DatasetManifest m;
    m.seed = options.seed;
    m.styles = options.styles;
    m.image_size = options.image_size;
    m.instances_per_class = options.instances_per_class;
    m.generator_version = std::string(kGeneratorVersion);
    m.root = out_dir;
    for (int c = 0; c < options.num_classes; ++c) m.classes.push_back(lib[static_cast<std::size_t>(c)].name);

    for (int c = 0; c < options.num_classes; ++c) {
        for (int i = 0; i < options.instances_per_class; ++i) {
            InstanceSpec spec;
            spec.class_index = c;
            spec.instance_id = c * options.instances_per_class + i;
            spec.jitter = options.jitter;
            spec.jitter_seed = derive_seed(options.seed, {1, static_cast<std::uint64_t>(spec.instance_id)});
            for (std::size_t s = 0; s < styles.size(); ++s) {
                const auto seed = derive_seed(options.seed, {2, static_cast<std::uint64_t>(spec.instance_id), s});
                auto image = render_motif(spec, *styles[s], options.image_size, seed);
                SampleRecord rec;
                rec.class_name = m.classes[static_cast<std::size_t>(c)];
                rec.class_index = c;
                rec.instance_id = spec.instance_id;
                rec.style = styles[s]->name;
                rec.sample_id = sample_id_for(rec.class_name, rec.instance_id, rec.style);
                rec.path = "images/" + rec.sample_id + ".pgm";
                rec.width = image.width;
                rec.height = image.height;
                write_pgm(out_dir / rec.path, image);
                m.records.push_back(std::move(rec));
            }
        }
    }
    split_dataset(m, options.ratios, options.seed);
    save_manifest(m, out_dir / "manifest.jsonl");
    return m;
}

std::string serialize_manifest(const DatasetManifest& m) {
    std::string out;
    json header{{"generator_version", m.generator_version},
                {"seed", m.seed},
                {"num_classes", m.classes.size()},
                {"classes", m.classes},
                {"styles", m.styles},
                {"image_size", m.image_size},
                {"instances_per_class", m.instances_per_class}};
    out += header.dump() + "\n";
    for (const auto& r : m.records) {
        json line{{"sample_id", r.sample_id}, {"class", r.class_name}, {"instance_id", r.instance_id},
                  {"style", r.style},         {"path", r.path},        {"width", r.width},
                  {"height", r.height},       {"split", to_string(r.split)}};
        out += line.dump() + "\n";
    }
    return out;
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root) {
    DatasetManifest m;
    m.root = root;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    try {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (line_no == 1) {
                m.generator_version = j.at("generator_version").get<std::string>();
                m.seed = j.at("seed").get<std::uint64_t>();
                m.classes = j.at("classes").get<std::vector<std::string>>();
                m.styles = j.at("styles").get<std::vector<std::string>>();
                m.image_size = j.at("image_size").get<int>();
                m.instances_per_class = j.at("instances_per_class").get<int>();
                if (j.at("num_classes").get<std::size_t>() != m.classes.size()) {
                    throw Error("header num_classes disagrees with the class list");
                }
                continue;
            }
            SampleRecord r;
            r.sample_id = j.at("sample_id").get<std::string>();
            r.class_name = j.at("class").get<std::string>();
            auto it = std::find(m.classes.begin(), m.classes.end(), r.class_name);
            if (it == m.classes.end()) throw Error("record class '" + r.class_name + "' is not in the header");
            r.class_index = static_cast<int>(it - m.classes.begin());
            r.instance_id = j.at("instance_id").get<int>();
            r.style = j.at("style").get<std::string>();
            r.path = j.at("path").get<std::string>();
            r.width = j.at("width").get<int>();
            r.height = j.at("height").get<int>();
            r.split = parse_split(j.at("split").get<std::string>());
            m.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, "", "manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(FormatError::Kind::bad_header, "", "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 0) throw FormatError(FormatError::Kind::bad_header, "", "manifest is empty");
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    const auto text = serialize_manifest(manifest);
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                          path.parent_path());
}

FloatImage to_network_input(const GrayImage& image, int size) {
    FloatImage plane(image.width, image.height);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) plane.values[i] = static_cast<float>(image.pixels[i]) / 255.0f;
    plane = area_resize(plane, size, size);
    for (auto& v : plane.values) v = 1.0f - v;
    return plane;
}

Batch load_batch(const DatasetManifest& manifest, std::span<const std::string> sample_ids, int target_size) {
    if (sample_ids.empty()) throw Error("load_batch: no sample ids given");
    const auto plane = static_cast<std::size_t>(target_size) * target_size;
    Batch batch{Tensor(Shape{static_cast<std::int64_t>(sample_ids.size()), 1, target_size, target_size}), {}};
    auto out = batch.images.data();
    for (std::size_t i = 0; i < sample_ids.size(); ++i) {
        const auto& rec = manifest.find(sample_ids[i]);
        const auto input = to_network_input(read_pgm(manifest.root / rec.path), target_size);
        std::copy(input.values.begin(), input.values.end(), out.begin() + static_cast<std::ptrdiff_t>(i * plane));
        batch.labels.push_back(rec.class_index);
    }
    return batch;
}

ImageCache::ImageCache(const DatasetManifest& manifest, int target_size) : size_(target_size) {
    for (const auto& rec : manifest.records) {
        planes_.emplace(rec.sample_id,
                        Entry{rec.class_index, to_network_input(read_pgm(manifest.root / rec.path), target_size).values});
    }
}

Batch ImageCache::batch(std::span<const std::string> sample_ids) const {
    if (sample_ids.empty()) throw Error("batch: no sample ids given");
    const auto plane = static_cast<std::size_t>(size_) * size_;
    Batch batch{Tensor(Shape{static_cast<std::int64_t>(sample_ids.size()), 1, size_, size_}), {}};
    auto out = batch.images.data();
    for (std::size_t i = 0; i < sample_ids.size(); ++i) {
        auto it = planes_.find(sample_ids[i]);
        if (it == planes_.end()) throw Error("unknown sample id '" + sample_ids[i] + "'");
        const auto& values = it->second.plane;
        std::copy(values.begin(), values.end(), out.begin() + static_cast<std::ptrdiff_t>(i * plane));
        batch.labels.push_back(it->second.label);
    }
    return batch;
}

}  // namespace xdepict
