use std::sync::Arc;

use agentmem::bench::profile::learn;
use agentmem::fixtures::Fixtures;
use agentmem::store::{load_session, MemoryDir, StoreError};
use agentmem_core::agent_rr::{run_and_learn, unbound_subtask, ReplayConfig};
use agentmem_core::embedding::{Embedder, HashEmbedder};
use agentmem_core::oracles::mock::RuleBookUpdater;
use agentmem_core::oracles::Oracles;
use agentmem_core::profile_memory::{retrieve_profile, ProfileConfig};
use agentmem_core::scheduler::Memories;
use agentmem_core::sim_env::catalog::TemplateStyle;

fn learned_memories(fx: &Fixtures, emb: &HashEmbedder) -> Memories {
    let user = &fx.profile.users[1];
    let updater = Oracles::default().with_updater(Arc::new(RuleBookUpdater::new(user.rules.clone())));
    let (profile, _) = learn(user, ProfileConfig::default(), &updater, emb).unwrap();
    let mut m = Memories {
        profile,
        templates: agentmem_core::experience_memory::TemplateStore::new(emb.dim()),
        actions: Default::default(),
    };
    for t in fx.catalog.templates(TemplateStyle::HumanCrafted) {
        m.templates.store(t, emb).unwrap();
    }
    let oracles = Oracles::default().with_operator(Arc::new(fx.catalog.operator()));
    let mut envs = fx.catalog.environments();
    for t in fx.actions.iter().take(40) {
        let st = unbound_subtask(&t.id, &t.app_id, &t.task_text);
        run_and_learn(&st, &mut m.actions, None, &oracles, emb, &ReplayConfig::default(), envs.get_mut(&t.app_id).unwrap());
    }
    m
}

#[test]
fn memories_survive_a_round_trip() {
    let fx = Fixtures::bundled();
    let emb = HashEmbedder::default();
    let m = learned_memories(&fx, &emb);
    let dir = tempfile::tempdir().unwrap();
    let md = MemoryDir::new(dir.path());
    md.save(&m).unwrap();
    let back = md.load(&emb).unwrap();

    assert_eq!(back.profile.graph, m.profile.graph);
    assert_eq!(back.templates.len(), m.templates.len());
    for t in m.templates.iter() {
        assert_eq!(back.templates.get(&t.id), Some(t));
    }
    assert_eq!(back.actions, m.actions);
    for t in &fx.profile.users[1].tests {
        assert_eq!(
            retrieve_profile(&t.task, &back.profile.graph, 3, 200, &emb),
            retrieve_profile(&t.task, &m.profile.graph, 3, 200, &emb)
        );
    }
}

#[test]
fn reloaded_caches_replay_without_the_operator() {
    let fx = Fixtures::bundled();
    let emb = HashEmbedder::default();
    let m = learned_memories(&fx, &emb);
    let dir = tempfile::tempdir().unwrap();
    let md = MemoryDir::new(dir.path());
    md.save(&m).unwrap();
    let mut back = md.load(&emb).unwrap();

    let t = &fx.actions[0];
    let oracles = Oracles::default().with_operator(Arc::new(fx.catalog.operator()));
    let mut env = fx.catalog.environments().remove(&t.app_id).unwrap();
    let st = unbound_subtask(&t.id, &t.app_id, &t.task_text);
    let (r, _) = run_and_learn(&st, &mut back.actions, None, &oracles, &emb, &ReplayConfig::default(), &mut env);
    assert_eq!(r.reuse_rate(), 1.0);
    assert_eq!(r.operator_calls, 0);

    let p = md.save_session(&r.record).unwrap();
    assert_eq!(load_session(&p).unwrap(), r.record);
    assert_eq!(md.sessions().unwrap(), vec![p]);
}

#[test]
fn future_schema_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let md = MemoryDir::new(dir.path());
    let emb = HashEmbedder::default();
    md.save_graph(&agentmem_core::profile_memory::DisGraph::new(emb.dim())).unwrap();
    let path = md.graph_path();
    let text = std::fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(
        md.load_graph(&emb),
        Err(StoreError::SchemaVersionMismatch { found: 2, expected: 1, .. })
    ));
}

#[test]
fn fixture_dir_loads_like_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    agentmem::fixtures::write_fixtures(dir.path(), agentmem::fixtures::DEFAULT_SEED).unwrap();
    assert_eq!(Fixtures::load(dir.path()).unwrap(), Fixtures::bundled());
    std::fs::write(dir.path().join(agentmem::fixtures::CATALOG_FILE), "[").unwrap();
    assert!(matches!(Fixtures::load(dir.path()), Err(StoreError::CorruptFile { .. })));
}
