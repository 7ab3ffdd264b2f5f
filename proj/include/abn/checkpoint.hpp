#pragma once

#include <iosfwd>
#include <string>

#include "abn/model.hpp"

namespace abn {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Binary checkpoint, little-endian throughout:
//   magic "ABNCKPT1"
//   u64 baseline, depth, num_classes, in_channels, split_point, mechanism,
//       task_count, vgg_width_count, vgg widths..., vgg_convs_per_stage,
//       tensor_count
//   per tensor: u64 name_len, name bytes, u64 rank, u64 dims[rank],
//               f64 values (IEEE-754 bit patterns)
// Tensors are the model's named state (parameters + BN running statistics)
// in declaration order.
void save_checkpoint(const AbnModel& model, const std::string& path);
AbnModel load_checkpoint(const std::string& path);

// Single-tensor record primitives (the unit the byte layout is defined in).
void write_tensor_record(std::ostream& out, const std::string& name, const Tensor& tensor);
std::pair<std::string, Tensor> read_tensor_record(std::istream& in);

}  // namespace abn
