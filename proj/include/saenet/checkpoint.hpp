#pragma once

#include <string>

#include "saenet/model.hpp"

namespace saenet {

// Flat little-endian f32 tensor data in ckpt_path, described by a CSV
// manifest of name,shape,offset (byte offset into the flat file). Parameters
// come first, then the batch-norm running buffers, in model collection order.
template <typename T>
void save_checkpoint(Model<T>& model, const std::string& ckpt_path,
                     const std::string& manifest_path);

// Restores into an identically shaped model; any name/shape/size mismatch is
// a FormatError naming the offending tensor.
template <typename T>
void load_checkpoint(Model<T>& model, const std::string& ckpt_path,
                     const std::string& manifest_path);

} // namespace saenet
