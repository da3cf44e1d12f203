#include "deltamon/model.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "model_engine.hpp"

namespace deltamon {

using nlohmann::json;

std::array<LayerSpec, 6> layer_configurations(const ModelDescriptor& d) {
    using K = LayerSpec::Kind;
    return {{
        {K::Conv, d.branch_filters, d.kernel, {"relu"}, 0.0f},
        {K::ConvRecurrent, d.branch_filters, d.kernel, {"tanh", "hard_sigmoid"}, d.dropout},
        {K::Conv, d.trunk_filters, d.kernel, {"relu"}, 0.0f},
        {K::ConvRecurrent, d.trunk_filters, d.kernel, {"tanh", "hard_sigmoid"}, d.dropout},
        {K::Conv, d.reduce_filters, d.kernel, {"relu"}, 0.0f},
        {K::Head, 1, 1, {"sigmoid"}, 0.0f},
    }};
}

std::vector<TensorInfo> tensor_table(const ModelDescriptor& d) {
    std::vector<TensorInfo> table;
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<int> shape) {
        std::size_t count = 1;
        for (int s : shape) count *= std::size_t(s);
        table.push_back(TensorInfo{std::move(name), std::move(shape), offset, count});
        offset += count;
    };
    auto add_conv = [&](const std::string& prefix, int oc, int ic, int ks) {
        add(prefix + ".kernel", {oc, ic, ks, ks});
        add(prefix + ".bias", {oc});
    };
    auto add_lstm = [&](const std::string& prefix, int ch, int ic, int ks) {
        add(prefix + ".kernel", {4 * ch, ic, ks, ks});
        add(prefix + ".recurrent_kernel", {4 * ch, ch, ks, ks});
        add(prefix + ".bias", {4 * ch});
    };
    if (d.branch_filters <= 0) return table;  // empty model
    add_conv("optical.conv", d.branch_filters, d.optical_bands, d.kernel);
    add_lstm("optical.recurrent", d.branch_filters, d.branch_filters, d.kernel);
    add_conv("sar.conv", d.branch_filters, d.sar_bands, d.kernel);
    add_lstm("sar.recurrent", d.branch_filters, d.branch_filters, d.kernel);
    add_conv("trunk.conv", d.trunk_filters, 2 * d.branch_filters, d.kernel);
    add_lstm("trunk.recurrent", d.trunk_filters, d.trunk_filters, d.kernel);
    add_conv("reduce.conv", d.reduce_filters, d.trunk_filters, d.kernel);
    add_conv("head.conv", 1, d.reduce_filters, 1);
    return table;
}

std::size_t expected_param_count(const ModelDescriptor& d) {
    std::size_t n = 0;
    for (const TensorInfo& t : tensor_table(d)) n += t.count;
    return n;
}

std::size_t param_count(const ModelParams& p) { return p.values.size(); }

ModelParams init_params(const ModelDescriptor& d, std::uint64_t seed) {
    ModelParams p(d);
    p.seed = seed;
    Rng rng(seed);
    for (const TensorInfo& t : tensor_table(d)) {
        const bool is_kernel = t.shape.size() == 4;
        if (!is_kernel) {
            p.values.insert(p.values.end(), t.count, 0.0f);  // biases start at zero
            continue;
        }
        // scaled-uniform fan-in scheme
        const std::size_t fan_in = std::size_t(t.shape[1]) * t.shape[2] * t.shape[3];
        const double limit = std::sqrt(6.0 / double(fan_in));
        for (std::size_t i = 0; i < t.count; ++i)
            p.values.push_back(float(rng.uniform(-limit, limit)));
    }
    return p;
}

// --- checkpoints -------------------------------------------------------------

namespace {

json descriptor_to_json(const ModelDescriptor& d) {
    return json{{"optical_bands", d.optical_bands}, {"sar_bands", d.sar_bands},
                {"branch_filters", d.branch_filters}, {"trunk_filters", d.trunk_filters},
                {"reduce_filters", d.reduce_filters}, {"kernel", d.kernel},
                {"dropout", d.dropout}};
}

ModelDescriptor descriptor_from_json(const json& j) {
    ModelDescriptor d;
    d.optical_bands = j.at("optical_bands").get<int>();
    d.sar_bands = j.at("sar_bands").get<int>();
    d.branch_filters = j.at("branch_filters").get<int>();
    d.trunk_filters = j.at("trunk_filters").get<int>();
    d.reduce_filters = j.at("reduce_filters").get<int>();
    d.kernel = j.at("kernel").get<int>();
    d.dropout = j.at("dropout").get<float>();
    return d;
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const ModelParams& p, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    json tensors = json::array();
    for (const TensorInfo& t : tensor_table(p.arch))
        tensors.push_back(json{{"name", t.name},
                               {"shape", t.shape},
                               {"offset", t.offset},
                               {"count", t.count}});
    json header{{"format_version", kCheckpointVersion},
                {"seed", p.seed},
                {"architecture", descriptor_to_json(p.arch)},
                {"tensors", std::move(tensors)}};
    std::ofstream out(dir / "model.json");
    if (!out) fail("cannot write checkpoint header in " + dir.string());
    out << header.dump(2) << "\n";
    write_f32(dir / "model.bin", p.values);
}

ModelParams load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) fail("missing checkpoint header: " + (dir / "model.json").string());
    json header;
    try {
        in >> header;
    } catch (const json::exception& e) {
        fail("corrupt checkpoint header: " + std::string(e.what()));
    }
    if (header.at("format_version").get<int>() != kCheckpointVersion)
        fail("unsupported checkpoint format version " +
             header.at("format_version").dump());
    ModelParams p(descriptor_from_json(header.at("architecture")));
    p.seed = header.at("seed").get<std::uint64_t>();

    const auto table = tensor_table(p.arch);
    std::ifstream blob(dir / "model.bin", std::ios::binary | std::ios::ate);
    if (!blob) fail("missing checkpoint blob: " + (dir / "model.bin").string());
    const std::size_t available = std::size_t(blob.tellg()) / sizeof(float);
    for (const TensorInfo& t : table)
        if (t.offset + t.count > available)
            fail("checkpoint blob truncated at tensor '" + t.name + "'");
    p.values = read_f32(dir / "model.bin", expected_param_count(p.arch));

    // cross-check the stored tensor index against the architecture
    const json& tensors = header.at("tensors");
    if (tensors.size() != table.size()) fail("checkpoint tensor index mismatch");
    for (std::size_t i = 0; i < table.size(); ++i) {
        const json& rec = tensors[i];
        if (rec.at("name").get<std::string>() != table[i].name ||
            rec.at("offset").get<std::size_t>() != table[i].offset ||
            rec.at("count").get<std::size_t>() != table[i].count)
            fail("checkpoint tensor index mismatch at '" + table[i].name + "'");
    }
    return p;
}

// --- window tensors ------------------------------------------------------------

WindowTensor extract_window(const AssembledSequence& seq, const Window& w) {
    if (w.start_index < 0 || w.start_index + w.count > seq.frame_count())
        fail("window outside assembled sequence");
    WindowTensor t;
    t.steps = w.count;
    t.bands = kAssembledBands;
    t.rows = seq.rows;
    t.cols = seq.cols;
    t.valid.assign(std::size_t(w.count), 1);
    t.data.resize(std::size_t(w.count) * t.frame_values());
    std::memcpy(t.data.data(), seq.frame(w.start_index), t.data.size() * sizeof(float));
    return t;
}

WindowTensor front_pad(WindowTensor w, int target_steps) {
    if (w.steps >= target_steps) return w;
    WindowTensor out;
    out.steps = target_steps;
    out.bands = w.bands;
    out.rows = w.rows;
    out.cols = w.cols;
    const int pad = target_steps - w.steps;
    out.valid.assign(std::size_t(target_steps), 0);
    out.data.assign(std::size_t(target_steps) * out.frame_values(), 0.0f);
    std::copy(w.valid.begin(), w.valid.end(), out.valid.begin() + pad);
    std::copy(w.data.begin(), w.data.end(),
              out.data.begin() + std::size_t(pad) * out.frame_values());
    return out;
}

// --- public forward/backward -----------------------------------------------------

Grid forward(const ModelParams& p, const WindowTensor& window, ForwardOptions opts) {
    detail::Engine<float> engine(p);
    std::vector<float> pred;
    engine.forward(window, opts.training, opts.dropout_seed, pred, nullptr);
    Grid out(window.rows, window.cols);
    out.v = std::move(pred);
    return out;
}

struct ForwardPass::Impl {
    explicit Impl(const ModelParams& p) : engine(p) {}
    detail::Engine<float> engine;
    WindowTensor window;
    detail::Engine<float>::Cache cache;
    Grid pred;
    bool has_context = false;
};

ForwardPass::ForwardPass(const ModelParams& p, const WindowTensor& window, ForwardOptions opts,
                         bool keep_context)
    : impl_(std::make_unique<Impl>(p)) {
    impl_->window = window;
    std::vector<float> pred;
    impl_->engine.forward(impl_->window, opts.training, opts.dropout_seed, pred,
                          keep_context ? &impl_->cache : nullptr);
    impl_->has_context = keep_context;
    impl_->pred = Grid(window.rows, window.cols);
    impl_->pred.v = std::move(pred);
}

ForwardPass::~ForwardPass() = default;
ForwardPass::ForwardPass(ForwardPass&&) noexcept = default;
ForwardPass& ForwardPass::operator=(ForwardPass&&) noexcept = default;

const Grid& ForwardPass::prediction() const { return impl_->pred; }

std::vector<float> ForwardPass::backward(const Grid& upstream) const {
    if (!impl_->has_context) fail("backward requires a retained forward context");
    if (upstream.rows != impl_->pred.rows || upstream.cols != impl_->pred.cols)
        fail("upstream gradient shape mismatch");
    detail::NetWeights<float> grads;
    grads.allocate(impl_->engine.arch());
    impl_->engine.backward(impl_->window, impl_->cache, upstream.v, grads);
    std::vector<float> flat;
    grads.store_flat(flat);
    return flat;
}

}  // namespace deltamon
