#include "saenet/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace saenet {

namespace {

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> state_entries(Model<T>& model) {
  std::vector<std::pair<std::string, Tensor<T>*>> entries;
  for (Param<T>* p : model.parameters()) entries.emplace_back(p->name, &p->value);
  for (auto& [name, tensor] : model.buffers()) entries.emplace_back(name, tensor);
  return entries;
}

std::string shape_x(const Shape& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape(const std::string& text, const std::string& manifest_path) {
  Shape shape;
  std::istringstream in(text);
  std::string dim;
  while (std::getline(in, dim, 'x')) {
    try {
      size_t pos = 0;
      shape.push_back(std::stoll(dim, &pos));
      if (pos != dim.size() || shape.back() <= 0) throw std::invalid_argument(dim);
    } catch (const std::exception&) {
      throw FormatError(manifest_path + ": bad shape '" + text + "'");
    }
  }
  if (shape.empty()) throw FormatError(manifest_path + ": empty shape field");
  return shape;
}

} // namespace

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& ckpt_path,
                     const std::string& manifest_path) {
  auto entries = state_entries(model);
  std::ofstream data(ckpt_path, std::ios::binary);
  if (!data) throw IoError("cannot open " + ckpt_path + " for writing");
  std::ofstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open " + manifest_path + " for writing");
  manifest << "name,shape,offset\n";

  int64_t offset = 0;
  std::vector<float> row;
  for (auto& [name, tensor] : entries) {
    manifest << name << "," << shape_x(tensor->shape()) << "," << offset << "\n";
    row.resize(static_cast<size_t>(tensor->numel()));
    for (int64_t i = 0; i < tensor->numel(); ++i) row[static_cast<size_t>(i)] = float((*tensor)[i]);
    data.write(reinterpret_cast<const char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
    offset += tensor->numel() * static_cast<int64_t>(sizeof(float));
  }
  if (!data || !manifest) throw IoError("short write saving checkpoint to " + ckpt_path);
}

template <typename T>
void load_checkpoint(Model<T>& model, const std::string& ckpt_path,
                     const std::string& manifest_path) {
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open " + manifest_path);
  std::string line;
  std::getline(manifest, line);
  if (line != "name,shape,offset")
    throw FormatError(manifest_path + ": header is '" + line + "', expected 'name,shape,offset'");

  struct Entry {
    std::string name;
    Shape shape;
    int64_t offset;
  };
  std::vector<Entry> listed;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    size_t c1 = line.find(',');
    size_t c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw FormatError(manifest_path + ": bad row '" + line + "'");
    Entry e;
    e.name = line.substr(0, c1);
    e.shape = parse_shape(line.substr(c1 + 1, c2 - c1 - 1), manifest_path);
    try {
      e.offset = std::stoll(line.substr(c2 + 1));
    } catch (const std::exception&) {
      throw FormatError(manifest_path + ": bad offset in row '" + line + "'");
    }
    listed.push_back(std::move(e));
  }

  auto entries = state_entries(model);
  if (listed.size() != entries.size())
    throw FormatError(manifest_path + " lists " + std::to_string(listed.size()) +
                      " tensors, model has " + std::to_string(entries.size()));

  std::ifstream data(ckpt_path, std::ios::binary | std::ios::ate);
  if (!data) throw IoError("cannot open " + ckpt_path);
  int64_t file_size = static_cast<int64_t>(data.tellg());

  std::vector<float> row;
  for (size_t i = 0; i < entries.size(); ++i) {
    auto& [name, tensor] = entries[i];
    const Entry& e = listed[i];
    if (e.name != name)
      throw FormatError(manifest_path + ": tensor " + std::to_string(i) + " is '" + e.name +
                        "', model expects '" + name + "'");
    if (e.shape != tensor->shape())
      throw FormatError(manifest_path + ": " + name + " has shape " + shape_x(e.shape) +
                        ", model expects " + shape_x(tensor->shape()));
    int64_t bytes = tensor->numel() * static_cast<int64_t>(sizeof(float));
    if (e.offset < 0 || e.offset + bytes > file_size)
      throw FormatError(ckpt_path + ": " + name + " at offset " + std::to_string(e.offset) +
                        " overruns the " + std::to_string(file_size) + "-byte file");
    data.seekg(e.offset);
    row.resize(static_cast<size_t>(tensor->numel()));
    data.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(bytes));
    if (data.gcount() != static_cast<std::streamsize>(bytes))
      throw FormatError(ckpt_path + ": short read for " + name);
    for (int64_t j = 0; j < tensor->numel(); ++j) (*tensor)[j] = T(row[static_cast<size_t>(j)]);
  }
}

template void save_checkpoint<float>(Model<float>&, const std::string&, const std::string&);
template void save_checkpoint<double>(Model<double>&, const std::string&, const std::string&);
template void load_checkpoint<float>(Model<float>&, const std::string&, const std::string&);
template void load_checkpoint<double>(Model<double>&, const std::string&, const std::string&);

} // namespace saenet
