#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xdepict/image.hpp"
#include "xdepict/tensor.hpp"

namespace xdepict {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// One parametric primitive in unit coordinates (x right, y down). Arcs run
// from `start` to `end` radians, counterclockwise in image space as the
// angle grows (positive angles point down).
struct Stroke {
    enum class Kind { polyline, arc, circle };
    Kind kind = Kind::polyline;
    std::vector<Point> points;  // polyline vertices
    Point center;               // arc and circle
    double radius = 0.0;
    double start = 0.0;
    double end = 0.0;

    static Stroke polyline(std::vector<Point> pts);
    static Stroke arc(Point c, double r, double start, double end);
    static Stroke circle(Point c, double r);
};

struct MotifClass {
    std::string name;
    std::vector<Stroke> program;
};

// The nine motif stroke programs, in canonical class order.
const std::vector<MotifClass>& motif_library();

struct InstanceSpec {
    int class_index = 0;
    int instance_id = 0;
    std::uint64_t jitter_seed = 0;
    double jitter = 0.03;  // stddev of control-point perturbation, unit coords
};

// Perturbed copy of the class stroke program; a pure function of the spec.
std::vector<Stroke> instance_strokes(const InstanceSpec& instance);

enum class Background { flat, grain, gradient };

struct DepictionStyle {
    std::string name;
    double stroke_width = 2.0;  // px
    double blur_sigma = 0.4;    // px
    double noise = 0.0;         // grain amplitude or Gaussian stddev, intensity units
    Background background = Background::flat;
    double background_level = 1.0;  // paper brightness, [0,1]
    double contrast = 1.0;          // ink darkening at full coverage

    void validate() const;
};

DepictionStyle trace_style();
DepictionStyle rubbing_style();
DepictionStyle radiography_style();
const std::vector<DepictionStyle>& default_styles();
const DepictionStyle& style_by_name(std::string_view name);

// Anti-aliased stroke coverage in [0,1] (1 = ink) on a size x size grid:
// 1 - smoothstep over the distance to the nearest primitive against width/2,
// max-composited across primitives.
FloatImage rasterize_strokes(std::span<const Stroke> strokes, double width_px, int size);

// Full depiction: rasterize, blur, then paper background, ink contrast and
// noise, quantized to 8 bits. `render_seed` drives noise and background.
GrayImage render_motif(const InstanceSpec& instance, const DepictionStyle& style, int size,
                       std::uint64_t render_seed);

enum class Split { train, val, test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SampleRecord {
    std::string sample_id;
    std::string class_name;
    int class_index = 0;
    int instance_id = 0;  // unique across the whole dataset
    std::string style;
    std::string path;  // relative to the manifest directory
    int width = 0;
    int height = 0;
    Split split = Split::train;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    std::vector<std::string> classes;
    std::vector<std::string> styles;
    int image_size = 64;
    int instances_per_class = 0;
    std::string generator_version;
    std::filesystem::path root;  // directory holding the manifest; not serialized
    std::vector<SampleRecord> records;

    const SampleRecord& find(std::string_view sample_id) const;
    bool contains(std::string_view sample_id) const;
    std::vector<std::string> ids(Split split) const;
    std::vector<const SampleRecord*> records_in(Split split) const;
    std::size_t num_classes() const { return classes.size(); }
};

struct SplitRatios {
    double train = 0.72;
    double val = 0.13;
    double test = 0.15;
};

struct GenerateOptions {
    int num_classes = 8;
    int instances_per_class = 40;
    std::vector<std::string> styles{"trace", "rubbing", "radiography"};
    int image_size = 64;
    std::uint64_t seed = 1;
    double jitter = 0.03;
    SplitRatios ratios;
};

inline constexpr std::string_view kGeneratorVersion = "xdepict-gen-1";

// Writes images/<sample_id>.pgm for every (instance, style) plus
// manifest.jsonl under `out_dir`. A pure function of the options.
DatasetManifest generate_dataset(const GenerateOptions& options, const std::filesystem::path& out_dir);

// Per-class instance counts for `total` instances via largest-remainder
// rounding of the ratios (ties go to the earlier split).
std::array<int, 3> split_counts(int total, const SplitRatios& ratios);

// Assigns whole instances to splits, stratified per class; every style of an
// instance follows it. Rewrites `split` on each record.
void split_dataset(DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

// w_c = N / (K * n_c) over the records of `split`.
std::vector<double> class_weights(const DatasetManifest& manifest, Split split);

std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct Batch {
    Tensor images;  // [N,1,S,S], ink high in [0,1]
    std::vector<std::int64_t> labels;
};

// Converts a decoded 8-bit image into the network input plane: area resize to
// size x size, scale to [0,1], invert so strokes are high.
FloatImage to_network_input(const GrayImage& image, int size);

Batch load_batch(const DatasetManifest& manifest, std::span<const std::string> sample_ids, int target_size);

// Decoded network inputs for every sample of a manifest, loaded once.
class ImageCache {
public:
    ImageCache(const DatasetManifest& manifest, int target_size);
    Batch batch(std::span<const std::string> sample_ids) const;
    bool contains(std::string_view sample_id) const { return planes_.find(sample_id) != planes_.end(); }
    int target_size() const { return size_; }

private:
    struct Entry {
        std::int64_t label;
        std::vector<float> plane;
    };
    int size_;
    std::map<std::string, Entry, std::less<>> planes_;
};

}  // namespace xdepict
