#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <unistd.h>

#include "refgame/error.hpp"
#include "refgame/rng.hpp"
#include "refgame/service.hpp"
#include "refgame/world_json.hpp"

namespace refgame::service {

namespace {

uint64_t combine(uint64_t a, uint64_t b) { return Rng::mix(a ^ Rng::mix(b)); }

json message_json(const agents::Message& m) { return {{"text", m.text}, {"tokens", m.tokens}}; }

agents::Message message_from(const json& j) {
    agents::Message m;
    m.text = j.at("text").get<std::string>();
    m.tokens = j.at("tokens").get<std::vector<int>>();
    return m;
}

json create_event(const SessionState& s, size_t draw_end) {
    json rounds = json::array();
    for (const auto& r : s.rounds)
        rounds.push_back({{"id", r.id},
                          {"instance_id", r.instance_id},
                          {"speaker", r.speaker},
                          {"message", message_json(r.message)},
                          {"candidates", r.candidates},
                          {"target_index", r.target_index}});
    return {{"event", "create"},
            {"session_id", s.id},
            {"group", s.group},
            {"annotator", s.annotator},
            {"draw_end", draw_end},
            {"rounds", rounds}};
}

// Appends one line and forces it to disk before acknowledging.
void append_line(const fs::path& path, const std::string& line) {
    std::FILE* f = std::fopen(path.c_str(), "a");
    require(f != nullptr, ErrorCode::io, "cannot append to " + path.string());
    const std::string data = line + "\n";
    const bool ok = std::fwrite(data.data(), 1, data.size(), f) == data.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    require(ok, ErrorCode::io, "short write to " + path.string());
}

void write_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::io, "cannot write " + tmp.string());
        out << text;
        out.flush();
        require(static_cast<bool>(out), ErrorCode::io, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

// Applies a choice to a copy of the state; the ack is the same for an
// identical resubmission.
json apply_choice(SessionState& s, int round, int index, bool* changed) {
    require(round >= 0 && round < static_cast<int>(s.rounds.size()), ErrorCode::not_found,
            "session " + s.id + " has no round " + std::to_string(round));
    const int n = static_cast<int>(s.rounds[round].candidates.size());
    require(index >= 0 && index < n, ErrorCode::invalid_argument,
            "choice index " + std::to_string(index) + " outside [0, " + std::to_string(n) + ")");
    int& slot = s.choices[round];
    *changed = false;
    if (slot == -1) {
        require(!s.complete(), ErrorCode::conflict, "session " + s.id + " is complete");
        slot = index;
        *changed = true;
    } else if (slot != index) {
        fail(ErrorCode::conflict, "round " + std::to_string(round) + " of session " + s.id +
                                      " was already answered with a different index");
    }
    return {{"session_id", s.id},
            {"round_id", round},
            {"index", index},
            {"recorded", true},
            {"remaining", static_cast<int>(s.rounds.size()) - s.answered()},
            {"complete", s.complete()}};
}

}  // namespace

bool SessionState::complete() const { return answered() == static_cast<int>(rounds.size()); }

int SessionState::answered() const {
    return static_cast<int>(std::count_if(choices.begin(), choices.end(), [](int c) { return c >= 0; }));
}

std::map<std::string, SpeakerStats> session_accuracy(const SessionState& s) {
    std::map<std::string, SpeakerStats> out;
    for (size_t r = 0; r < s.rounds.size(); ++r) {
        if (s.choices[r] < 0) continue;
        auto& st = out[s.rounds[r].speaker];
        ++st.total;
        st.correct += s.choices[r] == s.rounds[r].target_index;
    }
    return out;
}

std::vector<agents::RewardRecord> session_records(const SessionState& s) {
    std::vector<agents::RewardRecord> out;
    for (size_t r = 0; r < s.rounds.size(); ++r) {
        if (s.choices[r] < 0) continue;
        const Round& round = s.rounds[r];
        agents::RewardRecord rec;
        rec.instance_id = round.instance_id;
        rec.speaker = round.speaker;
        rec.message = round.message;
        rec.choice = s.choices[r];
        rec.target_index = round.target_index;
        rec.reward = agents::reward_for(rec.choice, rec.target_index);
        // A human choice is a point mass.
        rec.distribution.assign(round.candidates.size(), 0.0);
        rec.distribution[rec.choice] = 1.0;
        out.push_back(std::move(rec));
    }
    return out;
}

SessionManager::SessionManager(fs::path root, Groups groups, std::vector<PoolItem> pool, uint64_t seed)
    : root_(std::move(root)), groups_(std::move(groups)), pool_(std::move(pool)), seed_(seed) {
    require(!pool_.empty(), ErrorCode::invalid_argument, "the instance pool is empty");
    for (const auto& [name, members] : groups_) {
        require(!members.empty(), ErrorCode::invalid_argument, "group '" + name + "' has no speakers");
        for (const auto& m : members)
            for (const auto& item : pool_)
                require(item.messages.count(m) != 0, ErrorCode::dependency,
                        "no message from speaker '" + m + "' for instance " + std::to_string(item.instance_id));
    }
    fs::create_directories(root_);
    replay();
}

void SessionManager::replay() {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root_))
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        std::ifstream in(file);
        std::vector<std::string> lines;
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) lines.push_back(line);
        if (lines.empty()) continue;
        auto state = std::make_shared<SessionState>();
        const json head = json::parse(lines[0]);
        require(head.at("event") == "create", ErrorCode::internal, file.string() + ": missing create event");
        state->id = head.at("session_id").get<std::string>();
        state->group = head.at("group").get<std::string>();
        state->annotator = head.at("annotator").get<std::string>();
        for (const auto& r : head.at("rounds")) {
            Round round;
            round.id = r.at("id").get<int>();
            round.instance_id = r.at("instance_id").get<int64_t>();
            round.speaker = r.at("speaker").get<std::string>();
            round.message = message_from(r.at("message"));
            round.candidates = r.at("candidates").get<std::vector<json>>();
            round.target_index = r.at("target_index").get<int>();
            state->rounds.push_back(std::move(round));
        }
        state->choices.assign(state->rounds.size(), -1);
        cursor_ = std::max(cursor_, head.at("draw_end").get<size_t>());
        for (size_t i = 1; i < lines.size(); ++i) {
            json ev;
            try {
                ev = json::parse(lines[i]);
            } catch (const json::exception&) {
                // A torn final line from a crash mid-append was never acknowledged.
                require(i + 1 == lines.size(), ErrorCode::internal, file.string() + ": corrupt journal line");
                break;
            }
            bool changed = false;
            apply_choice(*state, ev.at("round").get<int>(), ev.at("index").get<int>(), &changed);
        }
        auto s = std::make_shared<Slot>();
        s->state = std::move(state);
        sessions_[s->state->id] = s;
    }
}

std::vector<size_t> SessionManager::draw(size_t count) {
    // Draws walk a fresh permutation of the pool per epoch, so sessions get
    // disjoint instances until the pool is exhausted.
    const size_t n = pool_.size();
    std::vector<size_t> out;
    std::vector<size_t> perm;
    size_t epoch = static_cast<size_t>(-1);
    for (size_t k = cursor_; k < cursor_ + count; ++k) {
        if (k / n != epoch) {
            epoch = k / n;
            perm.resize(n);
            std::iota(perm.begin(), perm.end(), size_t{0});
            Rng rng(combine(seed_, epoch));
            rng.shuffle(perm);
        }
        out.push_back(perm[k % n]);
    }
    cursor_ += count;
    return out;
}

std::string SessionManager::create_session(const std::string& group, int n_rounds, const std::string& annotator) {
    auto g = groups_.find(group);
    require(g != groups_.end(), ErrorCode::not_found, "unknown group '" + group + "'");
    require(n_rounds >= 1, ErrorCode::invalid_argument, "n_rounds must be at least 1");
    std::lock_guard<std::mutex> lock(create_);
    size_t number;
    {
        std::shared_lock<std::shared_mutex> read(index_);
        number = sessions_.size() + 1;
    }
    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", number);
    auto state = std::make_shared<SessionState>();
    state->id = id;
    state->group = group;
    state->annotator = annotator;
    Rng rng(combine(seed_, nn::fnv1a(state->id)));
    std::vector<std::string> members = g->second;
    rng.shuffle(members);
    const auto draws = draw(static_cast<size_t>(n_rounds));
    for (int r = 0; r < n_rounds; ++r) {
        const PoolItem& item = pool_[draws[r]];
        Round round;
        round.id = r;
        round.instance_id = item.instance_id;
        round.speaker = members[r % members.size()];
        round.message = item.messages.at(round.speaker);
        std::vector<int> order(item.candidates.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (size_t k = 0; k < order.size(); ++k) {
            round.candidates.push_back(item.candidates[order[k]]);
            if (order[k] == item.target_index) round.target_index = static_cast<int>(k);
        }
        state->rounds.push_back(std::move(round));
    }
    state->choices.assign(state->rounds.size(), -1);
    write_atomic(root_ / (state->id + ".jsonl"), create_event(*state, cursor_).dump() + "\n");
    auto s = std::make_shared<Slot>();
    s->state = state;
    std::unique_lock<std::shared_mutex> write(index_);
    sessions_[state->id] = s;
    return state->id;
}

std::shared_ptr<SessionManager::Slot> SessionManager::slot(const std::string& session) const {
    std::shared_lock<std::shared_mutex> read(index_);
    auto it = sessions_.find(session);
    require(it != sessions_.end(), ErrorCode::not_found, "unknown session '" + session + "'");
    return it->second;
}

std::shared_ptr<const SessionState> SessionManager::snapshot(const std::string& session) const {
    return std::atomic_load(&slot(session)->state);
}

std::vector<std::string> SessionManager::session_ids() const {
    std::shared_lock<std::shared_mutex> read(index_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) out.push_back(id);
    return out;
}

json SessionManager::next_round(const std::string& session) const {
    const auto s = snapshot(session);
    for (size_t r = 0; r < s->rounds.size(); ++r) {
        if (s->choices[r] >= 0) continue;
        const Round& round = s->rounds[r];
        json candidates = json::array();
        for (size_t k = 0; k < round.candidates.size(); ++k)
            candidates.push_back({{"index", k}, {"objects", round.candidates[k]}});
        // Neither the target nor the speaker is part of the payload.
        return {{"session_id", s->id},
                {"round_id", round.id},
                {"rounds_total", s->rounds.size()},
                {"answered", s->answered()},
                {"message", round.message.text},
                {"candidates", candidates}};
    }
    fail(ErrorCode::conflict, "session " + s->id + " is complete");
}

json SessionManager::submit_choice(const std::string& session, int round, int index) {
    auto sl = slot(session);
    std::lock_guard<std::mutex> lock(sl->write);
    auto next = std::make_shared<SessionState>(*std::atomic_load(&sl->state));
    bool changed = false;
    json ack = apply_choice(*next, round, index, &changed);
    if (changed) {
        append_line(root_ / (session + ".jsonl"),
                    json{{"event", "choice"}, {"round", round}, {"index", index}}.dump());
        std::atomic_store(&sl->state, std::shared_ptr<const SessionState>(std::move(next)));
    }
    return ack;
}

json SessionManager::stats(const std::string& session) const {
    const auto s = snapshot(session);
    require(s->complete(), ErrorCode::forbidden,
            "statistics are available once all rounds of session " + s->id + " are answered");
    json speakers = json::object();
    int correct = 0;
    for (const auto& [name, st] : session_accuracy(*s)) {
        speakers[name] = {{"correct", st.correct}, {"total", st.total}, {"accuracy", st.accuracy()}};
        correct += st.correct;
    }
    return {{"session_id", s->id},
            {"group", s->group},
            {"annotator", s->annotator},
            {"rounds", s->rounds.size()},
            {"accuracy", static_cast<double>(correct) / static_cast<double>(s->rounds.size())},
            {"speakers", speakers}};
}

std::string SessionManager::export_log(const std::string& session) const {
    const auto s = snapshot(session);
    require(s->complete(), ErrorCode::forbidden, "session " + s->id + " is not complete");
    std::string out;
    const auto records = session_records(*s);
    for (size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        out += json{{"session_id", s->id},
                    {"round_id", r},
                    {"annotator", s->annotator},
                    {"instance_id", rec.instance_id},
                    {"speaker", rec.speaker},
                    {"message", rec.message.text},
                    {"tokens", rec.message.tokens},
                    {"choice", rec.choice},
                    {"target_index", rec.target_index},
                    {"reward", rec.reward},
                    {"distribution", rec.distribution}}
                   .dump();
        out += '\n';
    }
    return out;
}

void SessionManager::export_human(const fs::path& human_dir) const {
    std::map<std::string, std::vector<agents::RewardRecord>> by_speaker;
    for (const auto& id : session_ids()) {
        const auto s = snapshot(id);
        if (!s->complete()) continue;
        for (auto& rec : session_records(*s)) by_speaker[rec.speaker].push_back(std::move(rec));
    }
    for (const auto& [speaker, records] : by_speaker)
        harness::write_records(human_dir / (speaker + ".jsonl"), records);
}

std::vector<PoolItem> load_pool(const harness::ExperimentConfig& c, const training::Dataset& data) {
    const harness::Layout l{c.out};
    std::set<std::string> speakers;
    for (const auto& [name, members] : c.service.groups) speakers.insert(members.begin(), members.end());
    const auto& instances = harness::split_instances(data, c.service.split);
    std::map<std::string, std::map<int64_t, agents::Message>> said;
    for (const auto& sp : speakers) {
        const fs::path file =
            l.cell(sp, c.service.seed) / "records" / (c.service.split + "_fixed.jsonl");
        require(fs::exists(file), ErrorCode::dependency,
                "no evaluated messages for speaker '" + sp + "' (" + file.string() + "); run evaluate first");
        for (auto& r : harness::read_records(file)) said[sp][r.instance_id] = std::move(r.message);
    }
    std::vector<PoolItem> pool;
    for (const auto& inst : instances) {
        PoolItem item;
        item.instance_id = inst.id;
        item.target_index = inst.target_index;
        for (int64_t id : inst.candidates)
            item.candidates.push_back(world::scene_objects_json(data.corpus.scene(id), data.corpus.catalog));
        bool complete = true;
        for (const auto& sp : speakers) {
            auto it = said[sp].find(inst.id);
            if (it == said[sp].end()) {
                complete = false;
                break;
            }
            item.messages[sp] = it->second;
        }
        if (complete) pool.push_back(std::move(item));
    }
    return pool;
}

}  // namespace refgame::service
