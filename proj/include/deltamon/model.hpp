#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "deltamon/pipeline.hpp"
#include "deltamon/raster.hpp"

namespace deltamon {

/// Shape of the change network. The default values are the production
/// topology; the filter counts are only meant to be lowered for reduced
/// test networks.
struct ModelDescriptor {
    int optical_bands = 13;
    int sar_bands = 4;
    int branch_filters = 10;   // per-branch conv + recurrent width
    int trunk_filters = 26;    // shared conv + recurrent width
    int reduce_filters = 8;    // pre-head conv width
    int kernel = 3;
    float dropout = 0.4f;

    bool operator==(const ModelDescriptor&) const = default;
    int window_bands() const { return optical_bands + sar_bands; }
};

struct LayerSpec {
    enum class Kind { Conv, ConvRecurrent, Head };
    Kind kind;
    int filters;
    int kernel;
    std::vector<std::string> activations;
    float dropout;
};

/// The six layer configurations, in network order: per-branch conv and
/// recurrent layer (applied to both branches), shared conv, shared recurrent,
/// reduction conv, sigmoid head.
std::array<LayerSpec, 6> layer_configurations(const ModelDescriptor& d);

struct TensorInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
};

std::vector<TensorInfo> tensor_table(const ModelDescriptor& d);
std::size_t expected_param_count(const ModelDescriptor& d);
constexpr std::size_t conv_parameter_count(int out_ch, int in_ch, int kh, int kw) {
    return std::size_t(out_ch) * in_ch * kh * kw + std::size_t(out_ch);
}

/// Named weight tensors stored as one flat 32-bit float blob in tensor_table
/// order, plus the architecture descriptor and the seed used at init.
struct ModelParams {
    ModelDescriptor arch;
    std::uint64_t seed = 0;
    std::vector<float> values;

    ModelParams() { arch = ModelDescriptor{0, 0, 0, 0, 0, 1, 0.0f}; }
    explicit ModelParams(const ModelDescriptor& d) : arch(d) {}
};

/// Deterministic init: kernels uniform in +-sqrt(6/fan_in) (recurrent kernels
/// use the same scaled-uniform scheme), biases zero.
ModelParams init_params(const ModelDescriptor& d, std::uint64_t seed);

std::size_t param_count(const ModelParams& p);

// Checkpoints: <dir>/model.json header (version, architecture, seed, tensor
// index) and <dir>/model.bin raw little-endian float32 blob.
void save_checkpoint(const ModelParams& p, const std::filesystem::path& dir);
ModelParams load_checkpoint(const std::filesystem::path& dir);

/// Network input: frames [T][bands][rows][cols] with per-step validity.
/// Invalid steps carry no data and leave the recurrent state untouched.
struct WindowTensor {
    int steps = 0;
    int bands = 0;
    int rows = 0;
    int cols = 0;
    std::vector<float> data;
    std::vector<std::uint8_t> valid;

    std::size_t frame_values() const { return std::size_t(bands) * rows * cols; }
    float* frame(int t) { return data.data() + std::size_t(t) * frame_values(); }
    const float* frame(int t) const { return data.data() + std::size_t(t) * frame_values(); }
};

WindowTensor extract_window(const AssembledSequence& seq, const Window& w);

/// Prepends invalid zero frames until the tensor holds target_steps frames.
WindowTensor front_pad(WindowTensor w, int target_steps);

struct ForwardOptions {
    bool training = false;
    std::uint64_t dropout_seed = 0;
};

/// Single forward evaluation; per-pixel outputs in (0, 1).
Grid forward(const ModelParams& p, const WindowTensor& window, ForwardOptions opts = {});

/// Forward pass that can retain the intermediate state needed for backward.
/// backward() returns gradients as a flat vector aligned with params.values.
class ForwardPass {
public:
    ForwardPass(const ModelParams& p, const WindowTensor& window, ForwardOptions opts,
                bool keep_context = true);
    ~ForwardPass();
    ForwardPass(ForwardPass&&) noexcept;
    ForwardPass& operator=(ForwardPass&&) noexcept;

    const Grid& prediction() const;
    std::vector<float> backward(const Grid& upstream) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace deltamon
