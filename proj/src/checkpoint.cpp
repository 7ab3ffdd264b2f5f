#include "abn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace abn {

namespace {

constexpr char kMagic[8] = {'A', 'B', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

void put_f64(std::ostream& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint64_t get_u64(std::istream& in, const std::string& what) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw CheckpointError("truncated while reading " + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in, const std::string& what) {
    return std::bit_cast<double>(get_u64(in, what));
}

}  // namespace

void write_tensor_record(std::ostream& out, const std::string& name, const Tensor& tensor) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, tensor.rank());
    for (std::size_t d : tensor.shape()) put_u64(out, d);
    for (double v : tensor.values()) put_f64(out, v);
}

std::pair<std::string, Tensor> read_tensor_record(std::istream& in) {
    const std::uint64_t name_len = get_u64(in, "tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!in) throw CheckpointError("truncated while reading tensor name");
    const std::uint64_t rank = get_u64(in, "rank of tensor " + name);
    Shape shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<std::size_t>(get_u64(in, "dims of tensor " + name));
    }
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = get_f64(in, "values of tensor " + name);
    return {name, Tensor::from_values(std::move(shape), std::move(values))};
}

void save_checkpoint(const AbnModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path);
    out.write(kMagic, 8);

    const NetworkSpec& spec = model.spec();
    put_u64(out, spec.baseline == Baseline::resnet_cifar ? 0 : 1);
    put_u64(out, spec.depth);
    put_u64(out, spec.num_classes);
    put_u64(out, spec.in_channels);
    put_u64(out, spec.split_point);
    put_u64(out, static_cast<std::uint64_t>(spec.mechanism));
    put_u64(out, spec.task_count);
    put_u64(out, spec.vgg_widths.size());
    for (std::size_t w : spec.vgg_widths) put_u64(out, w);
    put_u64(out, spec.vgg_convs_per_stage);

    std::vector<NamedTensor> state = model.named_state();
    put_u64(out, state.size());
    for (const NamedTensor& nt : state) write_tensor_record(out, nt.name, nt.tensor);
    if (!out) throw CheckpointError("write failed for " + path);
}

AbnModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw CheckpointError(path + ": bad magic, not an ABNCKPT1 checkpoint");
    }

    NetworkSpec spec;
    const std::uint64_t baseline = get_u64(in, "baseline kind");
    if (baseline > 1) throw CheckpointError(path + ": unknown baseline kind");
    spec.baseline = baseline == 0 ? Baseline::resnet_cifar : Baseline::small_vgg;
    spec.depth = static_cast<std::size_t>(get_u64(in, "depth"));
    spec.num_classes = static_cast<std::size_t>(get_u64(in, "num_classes"));
    spec.in_channels = static_cast<std::size_t>(get_u64(in, "in_channels"));
    spec.split_point = static_cast<std::size_t>(get_u64(in, "split_point"));
    const std::uint64_t mech = get_u64(in, "mechanism");
    if (mech > 2) throw CheckpointError(path + ": unknown mechanism");
    spec.mechanism = static_cast<Mechanism>(mech);
    spec.task_count = static_cast<std::size_t>(get_u64(in, "task_count"));
    const std::uint64_t n_widths = get_u64(in, "vgg width count");
    spec.vgg_widths.assign(n_widths, 0);
    for (std::uint64_t i = 0; i < n_widths; ++i) {
        spec.vgg_widths[i] = static_cast<std::size_t>(get_u64(in, "vgg widths"));
    }
    spec.vgg_convs_per_stage = static_cast<std::size_t>(get_u64(in, "vgg convs per stage"));

    AbnModel model = build_abn(spec, 0);
    std::vector<NamedTensor> state = model.named_state();

    const std::uint64_t count = get_u64(in, "tensor count");
    if (count != state.size()) {
        throw CheckpointError(path + ": checkpoint holds " + std::to_string(count) +
                              " tensors, model expects " + std::to_string(state.size()));
    }
    for (NamedTensor& nt : state) {
        auto [name, tensor] = read_tensor_record(in);
        if (name != nt.name) {
            throw CheckpointError(path + ": expected tensor " + nt.name + ", found " + name);
        }
        if (tensor.shape() != nt.tensor.shape()) {
            throw CheckpointError(path + ": tensor " + name + " has shape " +
                                  shape_str(tensor.shape()) + ", expected " +
                                  shape_str(nt.tensor.shape()));
        }
        nt.tensor.values() = tensor.values();
    }
    return model;
}

}  // namespace abn
