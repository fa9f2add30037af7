#pragma once

// Human-listener sessions: round plans balanced across a group of speakers,
// an append-only choice journal per session, and the HTTP front end.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "refgame/agents.hpp"
#include "refgame/harness.hpp"

namespace httplib {
class Server;
}

namespace refgame::service {

namespace fs = std::filesystem;
using nlohmann::json;

// One referential instance with every group member's utterance for it.
struct PoolItem {
    int64_t instance_id = 0;
    std::vector<json> candidates;  // renderable object lists, instance order
    int target_index = 0;
    std::map<std::string, agents::Message> messages;  // speaker -> message
};

using Groups = std::map<std::string, std::vector<std::string>>;

struct Round {
    int id = 0;
    int64_t instance_id = 0;
    std::string speaker;
    agents::Message message;
    std::vector<json> candidates;  // in the order shown
    int target_index = 0;          // into `candidates`
};

struct SessionState {
    std::string id;
    std::string group;
    std::string annotator;
    std::vector<Round> rounds;
    std::vector<int> choices;  // -1 while unanswered
    bool complete() const;
    int answered() const;
};

struct SpeakerStats {
    int correct = 0;
    int total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

// Per-speaker accuracy from a session's choices; a pure function of the log.
std::map<std::string, SpeakerStats> session_accuracy(const SessionState& s);

// Human RewardRecords of one session, in round order.
std::vector<agents::RewardRecord> session_records(const SessionState& s);

class SessionManager {
public:
    // Replays any journals under `root` (sessions resume after a restart).
    SessionManager(fs::path root, Groups groups, std::vector<PoolItem> pool, uint64_t seed);

    std::string create_session(const std::string& group, int n_rounds, const std::string& annotator = "");
    // First unanswered round; conflict once the session is complete.
    json next_round(const std::string& session) const;
    json submit_choice(const std::string& session, int round, int index);
    // forbidden until the session is complete.
    json stats(const std::string& session) const;
    std::string export_log(const std::string& session) const;

    std::shared_ptr<const SessionState> snapshot(const std::string& session) const;
    std::vector<std::string> session_ids() const;
    const Groups& groups() const { return groups_; }

    // Rewrites <human_dir>/<speaker>.jsonl from every completed session.
    void export_human(const fs::path& human_dir) const;

private:
    struct Slot {
        std::mutex write;                           // single writer per session
        std::shared_ptr<const SessionState> state;  // swapped atomically
    };

    std::shared_ptr<Slot> slot(const std::string& session) const;
    std::vector<size_t> draw(size_t count);
    void replay();

    fs::path root_;
    Groups groups_;
    std::vector<PoolItem> pool_;
    uint64_t seed_;
    size_t cursor_ = 0;  // pool draws handed out so far
    std::mutex create_;
    mutable std::shared_mutex index_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

// Candidate scenes and every group member's message on the configured split,
// read from the evaluated cells of service.seed.
std::vector<PoolItem> load_pool(const harness::ExperimentConfig& c, const training::Dataset& data);

// Registers the HTTP routes on `server`; errors are {code, message}.
void install_routes(httplib::Server& server, SessionManager& manager, const fs::path& human_dir);

}  // namespace refgame::service
