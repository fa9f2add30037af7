#pragma once

// Synthetic symbolic scenes standing in for images: generation, template
// captions, a fixed feature encoder and the dataset / referential splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace refgame::world {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kMaxCaptionTokens = 25;

struct Catalog {
    std::vector<std::string> characters = {"mike", "jenny", "bear", "dog", "snake"};
    std::vector<std::string> props = {"hat", "ball", "tent", "tree", "fire", "table"};
    std::vector<std::string> actions = {"sitting", "standing", "running", "scared", "waving"};
    std::vector<std::string> colors = {"red", "blue", "yellow", "green"};
    // Characters referred to without an article ("mike" vs "the bear").
    std::vector<std::string> proper_names = {"mike", "jenny"};
    int grid_width = 5;
    int grid_height = 4;

    // Throws invalid_argument on empty/duplicate lists or a degenerate grid.
    void validate() const;
    int type_count() const { return static_cast<int>(characters.size() + props.size()); }
};

enum class ObjectKind { character, prop };

struct SceneObject {
    ObjectKind kind = ObjectKind::character;
    int type = 0;     // index into Catalog::characters or Catalog::props
    int color = -1;   // props only
    int action = -1;  // characters only
    int x = 0;
    int y = 0;

    bool operator==(const SceneObject&) const = default;
};

struct Scene {
    int64_t id = 0;
    uint64_t seed = 0;
    std::vector<SceneObject> objects;

    // Content equality (ignores id and seed).
    bool same_content(const Scene& other) const { return objects == other.objects; }
    bool operator==(const Scene&) const = default;
};

struct Caption {
    std::vector<std::string> tokens;
    int template_id = 0;
    std::vector<int> args;  // indices into Scene::objects bound by the template

    std::string text() const;
    bool operator==(const Caption&) const = default;
};

enum class Difficulty { unsplit, easy, difficult };
const char* difficulty_name(Difficulty d);

struct ReferentialInstance {
    int64_t id = 0;
    int64_t target = 0;
    std::vector<int64_t> distractors;
    std::vector<int64_t> candidates;  // shuffled target + distractors
    int target_index = 0;
    Difficulty difficulty = Difficulty::unsplit;
};

struct DatasetSplits {
    std::vector<int64_t> train;
    std::vector<int64_t> validation;
    std::vector<int64_t> test;
    std::vector<ReferentialInstance> easy;
    std::vector<ReferentialInstance> difficult;
};

// ---- scenes and captions ---------------------------------------------------

Scene generate_scene(uint64_t seed, const Catalog& catalog, int64_t id = 0);

// Every caption the grammar can truthfully produce for the scene, in a
// fixed enumeration order.
std::vector<Caption> all_true_captions(const Scene& scene, const Catalog& catalog);
// k distinct captions chosen by the scene seed; fewer when the scene
// supports fewer.
std::vector<Caption> generate_captions(const Scene& scene, const Catalog& catalog, int k = 6);
// Re-checks a caption against its template predicate and rendering.
bool caption_holds(const Scene& scene, const Catalog& catalog, const Caption& caption);

// Word types the caption grammar can emit, sorted.
std::vector<std::string> caption_words(const Catalog& catalog);

// ---- features ----------------------------------------------------------------

// Block offsets of the feature layout: presence per type, colour per prop
// type, action per character type, normalised (x, y) per type.
struct FeatureLayout {
    explicit FeatureLayout(const Catalog& catalog);

    int presence = 0;
    int color = 0;
    int action = 0;
    int position = 0;
    int dimension = 0;

    int type_slot(ObjectKind kind, int type) const;
    int color_block(int prop_type) const;
    int action_block(int character_type) const;

private:
    int n_characters_ = 0;
    int n_colors_ = 0;
    int n_actions_ = 0;
};

std::vector<double> encode_scene(const Scene& scene, const Catalog& catalog);
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// ---- corpus ----------------------------------------------------------------

struct Corpus {
    Catalog catalog;
    std::vector<Scene> scenes;                  // scenes[i].id == i
    std::vector<std::vector<Caption>> captions;  // parallel to scenes

    const Scene& scene(int64_t id) const;
    const std::vector<Caption>& captions_of(int64_t id) const;
};

// Generates `n` content-distinct scenes with `k` captions each.
Corpus generate_corpus(int n, uint64_t seed, const Catalog& catalog, int captions_per_scene = 6);

// ---- splits ------------------------------------------------------------------

// Seeded shuffle then partition by ratios; each ratio must lie in (0, 1)
// and they must sum to 1.
DatasetSplits make_splits(const std::vector<int64_t>& scene_ids, std::array<double, 3> ratios,
                          uint64_t seed);

struct ReferentialSplits {
    std::vector<ReferentialInstance> easy;
    std::vector<ReferentialInstance> difficult;
};

// Easy pairs from the bottom tercile of pairwise cosine similarity,
// difficult pairs from the top tercile.
ReferentialSplits make_referential_splits(const Corpus& corpus,
                                          const std::vector<int64_t>& test_scenes,
                                          int pairs_per_split, uint64_t seed,
                                          int64_t first_instance_id = 0);

// Random target/distractor instances over a scene pool (training data).
std::vector<ReferentialInstance> sample_instances(const std::vector<int64_t>& pool, int count,
                                                  int distractors, uint64_t seed,
                                                  int64_t first_instance_id = 0);

// ---- persistence -------------------------------------------------------------

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path, const Catalog& catalog);
void save_splits(const DatasetSplits& splits, const std::filesystem::path& path);
DatasetSplits load_splits(const std::filesystem::path& path);

}  // namespace refgame::world
