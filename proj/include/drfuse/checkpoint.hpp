#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drfuse/config.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// Checkpoints are directories: one DRFT file per named tensor (f64, so
// reloads are bit-exact), an index mapping tensor names to files, and a
// config file describing the model hyperparameters.

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

inline std::string checkpoint_file_name(const std::string& tensor_name) {
    std::string f = tensor_name;
    for (char& c : f)
        if (c == '/' || c == '.') c = '_';
    return f + ".drft";
}

inline void save_checkpoint(const std::string& dir, const NamedTensors& tensors,
                            const KeyValueFile& model_config) {
    std::filesystem::create_directories(dir);
    KeyValueFile index;
    for (const auto& [name, p] : tensors) {
        std::string file = checkpoint_file_name(name);
        save_drft(dir + "/" + file, *p, DrftType::f64);
        index.set(name, file);
    }
    index.save(dir + "/index.txt");
    model_config.save(dir + "/config.txt");
}

inline KeyValueFile load_checkpoint_config(const std::string& dir) {
    return KeyValueFile::load(dir + "/config.txt");
}

// Loads into already-constructed tensors; every indexed name must be present
// with a matching shape, and vice versa.
inline void load_checkpoint(const std::string& dir, const NamedTensors& tensors) {
    KeyValueFile index = KeyValueFile::load(dir + "/index.txt");
    if (index.entries().size() != tensors.size())
        throw std::runtime_error("checkpoint " + dir + ": tensor count mismatch (" +
                                 std::to_string(index.entries().size()) + " stored, " +
                                 std::to_string(tensors.size()) + " expected)");
    for (const auto& [name, p] : tensors) {
        Tensor loaded = load_drft(dir + "/" + index.get(name));
        if (loaded.shape != p->shape)
            throw std::runtime_error("checkpoint " + dir + ": shape mismatch for '" + name +
                                     "': stored " + shape_str(loaded.shape) + ", expected " +
                                     shape_str(p->shape));
        *p = std::move(loaded);
    }
}

}  // namespace drfuse
