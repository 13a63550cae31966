#include "xdepict/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "xdepict/arch_json.hpp"
#include "xdepict/container.hpp"

namespace xdepict {

namespace {

constexpr std::string_view kCheckpointMagic = "XDPT1\n";

void he_normal(Tensor& t, std::int64_t fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
}

void append_bn(const std::string& prefix, const BatchNormLayer& bn, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".gamma", bn.gamma, true});
    out.push_back({prefix + ".beta", bn.beta, true});
    out.push_back({prefix + ".running_mean", bn.stats.mean, false});
    out.push_back({prefix + ".running_var", bn.stats.var, false});
}

}  // namespace

std::string_view to_string(HeadKind kind) {
    return kind == HeadKind::classifier ? "classifier" : "embedder";
}

HeadKind parse_head_kind(std::string_view text) {
    if (text == "classifier") return HeadKind::classifier;
    if (text == "embedder") return HeadKind::embedder;
    throw Error("unknown head kind '" + std::string(text) + "'");
}

void ArchConfig::validate() const {
    if (in_channels < 1) throw Error("arch: in_channels must be >= 1");
    if (stage_channels.empty()) throw Error("arch: stage_channels must be non-empty");
    for (std::size_t i = 0; i < stage_channels.size(); ++i) {
        if (stage_channels[i] < 1) throw Error("arch: stage widths must be positive");
        if (i > 0 && stage_channels[i] <= stage_channels[i - 1]) {
            throw Error("arch: stage_channels must be strictly increasing");
        }
    }
    if (blocks_per_stage < 1) throw Error("arch: blocks_per_stage must be >= 1");
    if (num_classes < 1) throw Error("arch: num_classes must be >= 1");
    if (embedding_dim < 2) throw Error("arch: embedding_dim must be >= 2");
    if (input_size < (1 << (stage_channels.size() - 1))) throw Error("arch: input_size too small for the stages");
}

bool ArchConfig::same_backbone(const ArchConfig& other) const {
    return in_channels == other.in_channels && stage_channels == other.stage_channels &&
           blocks_per_stage == other.blocks_per_stage && input_size == other.input_size;
}

const NamedTensor* Checkpoint::find(std::string_view name) const {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
    return it == tensors.end() ? nullptr : &*it;
}

ConvLayer::ConvLayer(int in, int out, int kernel, int stride_, int pad_, Rng& rng)
    : weight(Shape{out, in, kernel, kernel}), stride(stride_), pad(pad_) {
    he_normal(weight, static_cast<std::int64_t>(in) * kernel * kernel, rng);
    weight.set_requires_grad(true);
}

BatchNormLayer::BatchNormLayer(int channels)
    : gamma(Shape{channels}, 1.0f), beta(Shape{channels}, 0.0f), stats(RunningStats<float>::identity(channels)) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
}

Tensor BatchNormLayer::forward(const Tensor& x, Mode mode) {
    return batch_norm2d(x, gamma, beta, stats, mode);
}

Tensor BatchNormLayer::forward_eval(const Tensor& x) const {
    RunningStats<float> view = stats;  // shares storage; eval mode never writes it
    return batch_norm2d(x, gamma, beta, view, Mode::eval);
}

ResidualBlock::ResidualBlock(int in, int out, int stride, Rng& rng)
    : conv1(in, out, 3, stride, 1, rng), bn1(out), conv2(out, out, 3, 1, 1, rng), bn2(out) {
    if (stride != 1 || in != out) {
        projection_.emplace(in, out, 1, stride, 0, rng);
        projection_bn_.emplace(out);
    }
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
    auto h = relu(bn1.forward(conv1.forward(x), mode));
    auto y = bn2.forward(conv2.forward(h), mode);
    auto shortcut = projection_ ? projection_bn_->forward(projection_->forward(x), mode) : x;
    return relu(add(y, shortcut));
}

Tensor ResidualBlock::forward_eval(const Tensor& x) const {
    auto h = relu(bn1.forward_eval(conv1.forward(x)));
    auto y = bn2.forward_eval(conv2.forward(h));
    auto shortcut = projection_ ? projection_bn_->forward_eval(projection_->forward(x)) : x;
    return relu(add(y, shortcut));
}

void ResidualBlock::visit(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".conv1.weight", conv1.weight, true});
    append_bn(prefix + ".bn1", bn1, out);
    out.push_back({prefix + ".conv2.weight", conv2.weight, true});
    append_bn(prefix + ".bn2", bn2, out);
    if (projection_) {
        out.push_back({prefix + ".shortcut.conv.weight", projection_->weight, true});
        append_bn(prefix + ".shortcut.bn", *projection_bn_, out);
    }
}

ResNet::ResNet(const ArchConfig& config, HeadKind head, std::uint64_t seed) : arch_(config), head_(head) {
    arch_.validate();
    Rng rng(seed);
    const int first = arch_.stage_channels.front();
    stem_ = ConvLayer(arch_.in_channels, first, 3, 1, 1, rng);
    stem_bn_ = BatchNormLayer(first);
    int in = first;
    for (std::size_t s = 0; s < arch_.stage_channels.size(); ++s) {
        const int out = arch_.stage_channels[s];
        std::vector<ResidualBlock> blocks;
        for (int b = 0; b < arch_.blocks_per_stage; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            blocks.emplace_back(in, out, stride, rng);
            in = out;
        }
        stages_.push_back(std::move(blocks));
    }
    const int width = head_ == HeadKind::classifier ? arch_.num_classes : arch_.embedding_dim;
    head_weight_ = Tensor(Shape{width, in});
    he_normal(head_weight_, in, rng);
    head_weight_.set_requires_grad(true);
    head_bias_ = Tensor(Shape{width}, 0.0f);
    head_bias_.set_requires_grad(true);
}

void ResNet::check_input(const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != arch_.in_channels || batch.dim(2) != arch_.input_size ||
        batch.dim(3) != arch_.input_size) {
        throw ShapeError("model expects [N," + std::to_string(arch_.in_channels) + "," +
                         std::to_string(arch_.input_size) + "," + std::to_string(arch_.input_size) + "] input, got " +
                         shape_str(batch.shape()));
    }
}

Tensor ResNet::forward(const Tensor& batch, Mode mode) {
    check_input(batch);
    auto x = relu(stem_bn_.forward(stem_.forward(batch), mode));
    for (auto& stage : stages_) {
        for (auto& block : stage) x = block.forward(x, mode);
    }
    auto out = linear(global_avg_pool(x), head_weight_, head_bias_);
    if (head_ == HeadKind::embedder && arch_.normalize_embedding) out = l2_normalize_rows(out);
    return out;
}

Tensor ResNet::forward_eval(const Tensor& batch) const {
    check_input(batch);
    auto x = relu(stem_bn_.forward_eval(stem_.forward(batch)));
    for (const auto& stage : stages_) {
        for (const auto& block : stage) x = block.forward_eval(x);
    }
    auto out = linear(global_avg_pool(x), head_weight_, head_bias_);
    if (head_ == HeadKind::embedder && arch_.normalize_embedding) out = l2_normalize_rows(out);
    return out;
}

Tensor ResNet::forward_logits(const Tensor& batch, Mode mode) {
    if (head_ != HeadKind::classifier) throw Error("forward_logits needs a classifier head, model has an embedder");
    return forward(batch, mode);
}

Tensor ResNet::forward_embedding(const Tensor& batch, Mode mode) {
    if (head_ != HeadKind::embedder) throw Error("forward_embedding needs an embedder head, model has a classifier");
    return forward(batch, mode);
}

std::string ResNet::head_prefix() const {
    return head_ == HeadKind::classifier ? "classifier" : "embedding";
}

std::vector<NamedTensor> ResNet::named_tensors() const {
    std::vector<NamedTensor> out;
    out.push_back({"stem.conv.weight", stem_.weight, true});
    append_bn("stem.bn", stem_bn_, out);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (std::size_t b = 0; b < stages_[s].size(); ++b) {
            stages_[s][b].visit("stage" + std::to_string(s + 1) + ".block" + std::to_string(b), out);
        }
    }
    out.push_back({head_prefix() + ".weight", head_weight_, true});
    out.push_back({head_prefix() + ".bias", head_bias_, true});
    return out;
}

std::vector<Tensor> ResNet::parameters() const {
    std::vector<Tensor> params;
    for (auto& t : named_tensors()) {
        if (t.trainable) params.push_back(t.tensor);
    }
    return params;
}

std::int64_t ResNet::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

Checkpoint ResNet::to_checkpoint(TrainingMeta meta) const {
    Checkpoint c;
    c.arch = arch_;
    c.head = head_;
    c.meta = meta;
    for (auto& t : named_tensors()) c.tensors.push_back({t.name, t.tensor.clone(), t.trainable});
    return c;
}

void ResNet::load_state(const Checkpoint& checkpoint) {
    using Kind = FormatError::Kind;
    if (checkpoint.head != head_) {
        throw FormatError(Kind::arch_mismatch, "", "checkpoint head '" + std::string(to_string(checkpoint.head)) +
                                                       "' does not match model head '" +
                                                       std::string(to_string(head_)) + "'");
    }
    const auto mine = named_tensors();
    for (const auto& t : mine) {
        const auto* src = checkpoint.find(t.name);
        if (!src) throw FormatError(Kind::shape_mismatch, t.name, "checkpoint is missing tensor '" + t.name + "'");
        if (src->tensor.shape() != t.tensor.shape()) {
            throw FormatError(Kind::shape_mismatch, t.name,
                              "tensor '" + t.name + "' has shape " + shape_str(src->tensor.shape()) +
                                  " in the checkpoint, model expects " + shape_str(t.tensor.shape()));
        }
    }
    if (checkpoint.tensors.size() != mine.size()) {
        for (const auto& t : checkpoint.tensors) {
            if (std::none_of(mine.begin(), mine.end(), [&](const NamedTensor& m) { return m.name == t.name; })) {
                throw FormatError(Kind::shape_mismatch, t.name, "unexpected tensor '" + t.name + "' in checkpoint");
            }
        }
    }
    for (auto& t : mine) {
        auto dst = t.tensor;
        auto src = checkpoint.find(t.name)->tensor.data();
        std::copy(src.begin(), src.end(), dst.data().begin());
    }
}

ResNet ResNet::from_checkpoint(const Checkpoint& checkpoint) {
    ResNet model(checkpoint.arch, checkpoint.head, 0);
    model.load_state(checkpoint);
    return model;
}

ResNet swap_head_to_embedding(const Checkpoint& classifier, const ArchConfig& requested, std::uint64_t seed) {
    if (classifier.head != HeadKind::classifier) throw Error("head swap needs a classifier checkpoint");
    if (!classifier.arch.same_backbone(requested)) {
        throw FormatError(FormatError::Kind::arch_mismatch, "",
                          "requested architecture does not match the checkpoint backbone");
    }
    ResNet model(requested, HeadKind::embedder, seed);
    for (auto& t : model.named_tensors()) {
        if (t.name.starts_with("embedding.")) continue;
        const auto* src = classifier.find(t.name);
        if (!src) {
            throw FormatError(FormatError::Kind::shape_mismatch, t.name, "checkpoint is missing tensor '" + t.name + "'");
        }
        if (src->tensor.shape() != t.tensor.shape()) {
            throw FormatError(FormatError::Kind::shape_mismatch, t.name, "tensor '" + t.name + "' shape mismatch");
        }
        auto values = src->tensor.data();
        auto dst = t.tensor;
        std::copy(values.begin(), values.end(), dst.data().begin());
    }
    return model;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
    nlohmann::json header;
    header["arch"] = checkpoint.arch;
    header["head_kind"] = to_string(checkpoint.head);
    header["training_meta"] = {{"epochs", checkpoint.meta.epochs},
                               {"final_loss", checkpoint.meta.final_loss},
                               {"seed", checkpoint.meta.seed}};
    auto manifest = nlohmann::json::array();
    std::vector<float> payload;
    std::uint64_t offset = 0;
    for (const auto& t : checkpoint.tensors) {
        const std::uint64_t length = static_cast<std::uint64_t>(t.tensor.numel()) * 4;
        manifest.push_back({{"name", t.name},
                            {"shape", t.tensor.shape()},
                            {"dtype", "f32"},
                            {"offset", offset},
                            {"length", length},
                            {"trainable", t.trainable}});
        offset += length;
        auto values = t.tensor.data();
        payload.insert(payload.end(), values.begin(), values.end());
    }
    header["tensors"] = std::move(manifest);
    return encode_container(kCheckpointMagic, header.dump(), payload);
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
    using Kind = FormatError::Kind;
    auto container = decode_container(bytes, kCheckpointMagic);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(container.header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(Kind::bad_header, "", std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Checkpoint c;
    try {
        c.arch = header.at("arch").get<ArchConfig>();
        c.head = parse_head_kind(header.at("head_kind").get<std::string>());
        const auto& meta = header.at("training_meta");
        c.meta.epochs = meta.at("epochs").get<std::int64_t>();
        c.meta.final_loss = meta.at("final_loss").get<double>();
        c.meta.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(Kind::bad_header, "", std::string("checkpoint header: ") + e.what());
    }
    const std::uint64_t payload_bytes = container.payload.size() * 4;
    std::uint64_t expected_offset = 0;
    for (const auto& entry : header.at("tensors")) {
        std::string name;
        Shape shape;
        std::uint64_t offset = 0, length = 0;
        try {
            name = entry.at("name").get<std::string>();
            shape = entry.at("shape").get<Shape>();
            offset = entry.at("offset").get<std::uint64_t>();
            length = entry.at("length").get<std::uint64_t>();
            if (entry.at("dtype").get<std::string>() != "f32") {
                throw FormatError(Kind::bad_header, name, "tensor '" + name + "' has unsupported dtype");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(Kind::bad_header, name, "tensor manifest entry: " + std::string(e.what()));
        }
        std::int64_t numel = 0;
        try {
            numel = shape_numel(shape);
        } catch (const ShapeError&) {
            throw FormatError(Kind::shape_mismatch, name, "tensor '" + name + "' has an invalid shape");
        }
        if (length != static_cast<std::uint64_t>(numel) * 4 || offset != expected_offset) {
            throw FormatError(Kind::shape_mismatch, name,
                              "tensor '" + name + "' byte range does not match its shape " + shape_str(shape));
        }
        if (offset + length > payload_bytes) {
            throw FormatError(Kind::truncated, name, "truncated: payload ends inside tensor '" + name + "'");
        }
        std::vector<float> values(container.payload.begin() + static_cast<std::ptrdiff_t>(offset / 4),
                                  container.payload.begin() + static_cast<std::ptrdiff_t>((offset + length) / 4));
        const bool trainable = entry.value("trainable", true);
        c.tensors.push_back({name, Tensor(shape, std::move(values)), trainable});
        expected_offset = offset + length;
    }
    if (expected_offset != payload_bytes) {
        throw FormatError(Kind::bad_header, "", "payload has " + std::to_string(payload_bytes - expected_offset) +
                                                    " bytes not described by the tensor manifest");
    }
    return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint(read_file(path));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchConfig& expected) {
    auto c = load_checkpoint(path);
    if (!(c.arch == expected)) {
        throw FormatError(FormatError::Kind::arch_mismatch, "",
                          "checkpoint " + path.string() + " was saved with a different architecture");
    }
    return c;
}

}  // namespace xdepict
