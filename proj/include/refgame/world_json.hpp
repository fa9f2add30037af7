#pragma once

#include "json.hpp"
#include "refgame/world.hpp"

namespace refgame::world {

// One corpus line: id, seed, objects and captions.
nlohmann::json scene_to_json(const Scene& scene, const std::vector<Caption>& captions,
                             const Catalog& catalog);
// Renderable object list (kind, type, color, action, x, y) by name.
nlohmann::json scene_objects_json(const Scene& scene, const Catalog& catalog);

}  // namespace refgame::world
