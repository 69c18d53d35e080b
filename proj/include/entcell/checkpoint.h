#pragma once

#include <string>

#include "entcell/organism.h"
#include "entcell/toyworld.h"

namespace entcell {

// Checkpoint layout: a directory holding manifest.json (config, ground-truth
// spec, tensor index) and tensors.bin (concatenated raw little-endian float32,
// row-major). Round trips are bit-exact.
void save_checkpoint(const Organism & organism, const std::string & dir);
Organism load_checkpoint(const std::string & dir);

// World data rides along in the manifest so a checkpoint is self-contained:
// vocabulary, unknown names, negative probe variants.
void save_world_checkpoint(const Organism & organism, const ToyWorld & world,
                           const std::string & dir);

struct LoadedWorld {
    Organism organism;
    Vocabulary vocab;
    std::map<std::string, std::vector<int>> negative_variants;
    std::vector<std::string> unknown_names;
};
LoadedWorld load_world_checkpoint(const std::string & dir);

} // namespace entcell
