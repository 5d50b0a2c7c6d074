use i2mv_core::data::Split;
use i2mv_promptgen::{base_schedule, mentions, plan_prompts, render_block, Error, Example, ExamplePool, Target};
use proptest::prelude::*;

fn ex(name: &str, desc: &str) -> Example {
    Example {
        class_name: name.into(),
        description: desc.into(),
    }
}

fn pool() -> ExamplePool {
    ExamplePool::new(
        "animals",
        vec![
            ex("A", "Striped grazer of the savanna."),
            ex("B", "Large grey mammal with a trunk."),
            ex("C", "Small nocturnal bird of prey."),
            ex("R", "Spotted cat that runs fast."),
        ],
        3,
        2,
    )
    .unwrap()
}

fn target(name: &str) -> Target {
    Target {
        name: name.into(),
        split: Split::Unseen,
    }
}

fn pairs(name: &str) -> Vec<Vec<usize>> {
    let plan = plan_prompts(&pool(), &[target(name)]).unwrap();
    plan.classes[0].prompts.iter().map(|p| p.examples.clone()).collect()
}

#[test]
fn template_is_filled_at_every_slot() {
    let b = render_block("birds", "Cardinal", Some("Red songbird with a crest.")).unwrap();
    assert_eq!(
        b,
        "A person wants to recognize birds in images. They come across Cardinal and search online for \
         facts about Cardinal. They think the following description of Cardinal is a good description.\n\
         Red songbird with a crest."
    );
    assert_eq!(b.matches("Cardinal").count(), 3);
}

#[test]
fn query_block_stops_after_the_template() {
    let q = render_block("animals", "zebra", None).unwrap();
    assert!(q.ends_with("They think the following description of zebra is a good description."));
}

#[test]
fn class_names_are_trimmed() {
    assert_eq!(
        render_block("animals", "zebra  \n", None).unwrap(),
        render_block("animals", "zebra", None).unwrap()
    );
    assert!(matches!(render_block("animals", "  ", None), Err(Error::Config(_))));
    assert!(matches!(render_block("", "zebra", None), Err(Error::Config(_))));
}

#[test]
fn unrelated_target_uses_the_three_pairs() {
    assert_eq!(pairs("zebra"), vec![vec![0, 1], vec![1, 2], vec![0, 2]]);
    assert_eq!(base_schedule(3, 2), vec![vec![0, 1], vec![1, 2], vec![0, 2]]);
}

#[test]
fn colliding_example_is_swapped_for_the_reserve() {
    assert_eq!(pairs("B"), vec![vec![0, 3], vec![3, 2], vec![0, 2]]);
    let plan = plan_prompts(&pool(), &[target("B")]).unwrap();
    for p in &plan.classes[0].prompts {
        let (examples, _query) = p.text.rsplit_once("\n\n").unwrap();
        assert!(!mentions(examples, "B"));
    }
}

#[test]
fn reserve_class_as_target_changes_nothing() {
    assert_eq!(pairs("R"), pairs("zebra"));
}

#[test]
fn reserve_collision_falls_back_to_the_unused_primary() {
    // Target "cat" is named in A's block and in the reserve's description.
    let pool = ExamplePool::new(
        "animals",
        vec![
            ex("A", "Looks like a cat."),
            ex("B", "Grey."),
            ex("C", "Brown."),
            ex("R", "A wild cat."),
        ],
        3,
        2,
    )
    .unwrap();
    let plan = plan_prompts(&pool, &[target("cat")]).unwrap();
    let got: Vec<_> = plan.classes[0].prompts.iter().map(|p| p.examples.clone()).collect();
    assert_eq!(got, vec![vec![2, 1], vec![1, 2], vec![1, 2]]);
}

#[test]
fn no_clean_example_left_is_an_error() {
    let pool = ExamplePool::new(
        "animals",
        vec![ex("A", "a cat"), ex("B", "a cat"), ex("C", "plain"), ex("R", "a cat")],
        3,
        2,
    )
    .unwrap();
    let err = plan_prompts(&pool, &[target("cat")]).unwrap_err();
    assert!(matches!(err, Error::PoolExhausted { .. }), "{err}");
}

#[test]
fn pool_must_hold_one_more_example_than_views() {
    let three = vec![ex("A", "x"), ex("B", "y"), ex("C", "z")];
    assert!(matches!(ExamplePool::new("animals", three, 3, 2), Err(Error::Config(_))));
    let dup = vec![ex("A", "x"), ex("A", "y"), ex("C", "z"), ex("R", "w")];
    assert!(matches!(ExamplePool::new("animals", dup, 3, 2), Err(Error::Config(_))));
    let four = vec![ex("A", "x"), ex("B", "y"), ex("C", "z"), ex("R", "w")];
    assert!(matches!(ExamplePool::new("animals", four, 3, 4), Err(Error::Config(_))));
}

#[test]
fn blocks_are_separated_by_one_blank_line() {
    let plan = plan_prompts(&pool(), &[target("zebra")]).unwrap();
    let text = &plan.classes[0].prompts[0].text;
    let blocks: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(blocks.len(), 3);
    assert!(blocks[0].contains("come across A "));
    assert!(blocks[1].contains("come across B "));
    assert!(blocks[2].ends_with("of zebra is a good description."));
}

#[test]
fn fewer_shots_follow_the_same_rotation() {
    assert_eq!(base_schedule(3, 1), vec![vec![0], vec![1], vec![2]]);
    assert_eq!(base_schedule(3, 0), vec![Vec::<usize>::new(); 3]);
    let zero = ExamplePool::new("animals", pool().examples().to_vec(), 3, 0).unwrap();
    let plan = plan_prompts(&zero, &[target("zebra")]).unwrap();
    assert_eq!(plan.classes[0].prompts[0].text, render_block("animals", "zebra", None).unwrap());
}

#[test]
fn mention_is_whole_word_and_case_blind() {
    assert!(mentions("Seen near a Black Bear.", "black bear"));
    assert!(!mentions("A bearded vulture.", "bear"));
    assert!(!mentions("anything", "  "));
}

proptest! {
    #[test]
    fn no_prompt_mentions_its_query_in_an_example(
        names in proptest::collection::btree_set("[a-f]{1,3}", 1..30),
        descs in proptest::collection::vec("[a-f ]{0,12}", 4),
    ) {
        let pool = ExamplePool::new(
            "animals",
            ["ab", "cd", "ef", "fa"].iter().zip(&descs).map(|(n, d)| ex(n, &format!("x {d}"))).collect(),
            3,
            2,
        ).unwrap();
        let targets: Vec<Target> = names.iter().map(|n| target(n)).collect();
        let a = plan_prompts(&pool, &targets);
        let b = plan_prompts(&pool, &targets);
        match (&a, &b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "planning is not deterministic"),
        }
        if let Ok(plan) = a {
            let blocks: Vec<String> = pool
                .examples()
                .iter()
                .map(|e| render_block("animals", &e.class_name, Some(&e.description)).unwrap())
                .collect();
            for (class, t) in plan.classes.iter().zip(&targets) {
                prop_assert_eq!(class.prompts.len(), 3);
                let hit: Vec<bool> = blocks.iter().map(|b| mentions(b, &t.name)).collect();
                let reserve_only = hit[..3].iter().filter(|&&h| h).count() <= 1 && !hit[3];
                let mut sets: Vec<Vec<usize>> = Vec::new();
                for p in &class.prompts {
                    for &i in &p.examples {
                        prop_assert!(!hit[i]);
                    }
                    let mut s = p.examples.clone();
                    s.sort_unstable();
                    s.dedup();
                    prop_assert_eq!(s.len(), 2);
                    sets.push(s);
                }
                sets.sort();
                sets.dedup();
                if reserve_only {
                    prop_assert_eq!(sets.len(), 3);
                }
            }
        }
    }
}
