//! Per-user dashboard personalization: tabs, widget instances and their
//! configuration.
//!
//! Every mutation is committed to the store immediately under a per-user
//! lock and bumps the layout version. Writers that carry a version use
//! optimistic concurrency: a stale version is rejected with
//! [`LayoutError::VersionConflict`] instead of silently overwriting.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use dashmap::DashMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::identity::SessionHooks;
use crate::ids::{DescriptorId, InstanceId, TabId, UserId};
use crate::registry::{Enabler, RegistryError, UsageEvent, WidgetRegistry};
use crate::store::{keys, Store, StoreError, StoreExt};

pub const DEFAULT_TAB: &str = "Home";

pub type WidgetConfig = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DashboardLayout {
    pub user_id: UserId,
    pub version: u64,
    pub tabs: Vec<Tab>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tab {
    pub tab_id: TabId,
    pub name: String,
    pub widgets: Vec<WidgetInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetInstance {
    pub instance_id: InstanceId,
    pub descriptor_id: DescriptorId,
    #[serde(default)]
    pub config: WidgetConfig,
}

impl DashboardLayout {
    pub fn default_for(user: &UserId) -> Self {
        DashboardLayout {
            user_id: user.clone(),
            version: 0,
            tabs: vec![Tab {
                tab_id: TabId::generate(),
                name: DEFAULT_TAB.to_owned(),
                widgets: vec![WidgetInstance {
                    instance_id: InstanceId::generate(),
                    descriptor_id: Enabler::Profile.descriptor_id(),
                    config: WidgetConfig::new(),
                }],
            }],
        }
    }

    pub fn tab(&self, id: &TabId) -> Option<&Tab> {
        self.tabs.iter().find(|t| &t.tab_id == id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &WidgetInstance> {
        self.tabs.iter().flat_map(|t| t.widgets.iter())
    }

    pub fn find_instance(&self, id: &InstanceId) -> Option<&WidgetInstance> {
        self.instances().find(|w| &w.instance_id == id)
    }

    /// (tab index, position) of an instance.
    fn locate(&self, id: &InstanceId) -> Option<(usize, usize)> {
        self.tabs.iter().enumerate().find_map(|(ti, t)| {
            t.widgets
                .iter()
                .position(|w| &w.instance_id == id)
                .map(|p| (ti, p))
        })
    }

    fn tab_index(&self, id: &TabId) -> Option<usize> {
        self.tabs.iter().position(|t| &t.tab_id == id)
    }

    /// Structural equality ignoring the version counter.
    pub fn same_content(&self, other: &DashboardLayout) -> bool {
        self.user_id == other.user_id && self.tabs == other.tabs
    }

    fn check_structure(&self) -> Result<(), LayoutError> {
        if self.tabs.is_empty() {
            return Err(LayoutError::InvalidLayout("a layout needs at least one tab".into()));
        }
        let mut names = HashSet::new();
        let mut tab_ids = HashSet::new();
        let mut instance_ids = HashSet::new();
        for tab in &self.tabs {
            if tab.name.trim().is_empty() {
                return Err(LayoutError::InvalidLayout("empty tab name".into()));
            }
            if !names.insert(tab.name.as_str()) {
                return Err(LayoutError::DuplicateTabName(tab.name.clone()));
            }
            if !tab_ids.insert(&tab.tab_id) {
                return Err(LayoutError::InvalidLayout(format!("tab id {} repeated", tab.tab_id)));
            }
            for w in &tab.widgets {
                if !instance_ids.insert(&w.instance_id) {
                    return Err(LayoutError::InvalidLayout(format!(
                        "instance id {} repeated",
                        w.instance_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A layout mutation as carried by `POST /api/layout/ops`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum LayoutOp {
    Add {
        tab_id: TabId,
        descriptor_id: DescriptorId,
        #[serde(default)]
        config: WidgetConfig,
    },
    Move {
        instance_id: InstanceId,
        target_tab_id: TabId,
        target_position: usize,
    },
    Remove {
        instance_id: InstanceId,
    },
    CreateTab {
        name: String,
    },
    DeleteTab {
        tab_id: TabId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpOutcome {
    pub layout: DashboardLayout,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<WidgetInstance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tab: Option<Tab>,
}

#[derive(Debug, thiserror::Error)]
pub enum LayoutError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("layout version {given} is stale (stored {stored})")]
    VersionConflict { stored: u64, given: u64 },
    #[error("unknown tab {0}")]
    UnknownTab(TabId),
    #[error("unknown widget descriptor {0}")]
    UnknownDescriptor(DescriptorId),
    #[error("unknown widget instance {0}")]
    UnknownInstance(InstanceId),
    #[error("position {position} out of range 0..={max}")]
    PositionOutOfRange { position: usize, max: usize },
    #[error("tab name {0:?} already used")]
    DuplicateTabName(String),
    #[error("tab name must not be empty")]
    InvalidTabName,
    #[error("the last tab cannot be deleted")]
    LastTabUndeletable,
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<RegistryError> for LayoutError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::UnknownDescriptor(id) => LayoutError::UnknownDescriptor(id),
            RegistryError::Store(s) => LayoutError::Store(s),
            other => LayoutError::InvalidLayout(other.to_string()),
        }
    }
}

pub struct LayoutService {
    store: Arc<dyn Store>,
    registry: Arc<WidgetRegistry>,
    locks: DashMap<UserId, Arc<Mutex<()>>>,
}

impl LayoutService {
    pub fn new(store: Arc<dyn Store>, registry: Arc<WidgetRegistry>) -> Self {
        LayoutService {
            store,
            registry,
            locks: DashMap::new(),
        }
    }

    fn lock_for(&self, user: &UserId) -> Arc<Mutex<()>> {
        self.locks.entry(user.clone()).or_default().clone()
    }

    fn ensure_user(&self, user: &UserId) -> Result<(), LayoutError> {
        if self.store.contains(&keys::user(user))? {
            Ok(())
        } else {
            Err(LayoutError::UnknownUser(user.clone()))
        }
    }

    /// Reads the committed layout, creating and persisting the default one
    /// on first use. Caller must hold the user's lock.
    fn load_locked(&self, user: &UserId) -> Result<DashboardLayout, LayoutError> {
        self.ensure_user(user)?;
        if let Some(layout) = self.store.get_json(&keys::layout(user))? {
            return Ok(layout);
        }
        let layout = DashboardLayout::default_for(user);
        self.store.put_json(&keys::layout(user), &layout)?;
        Ok(layout)
    }

    /// The last committed layout; a first-time user gets the default one.
    pub fn restore_on_connect(&self, user: &UserId) -> Result<DashboardLayout, LayoutError> {
        self.ensure_user(user)?;
        if let Some(layout) = self.store.get_json(&keys::layout(user))? {
            return Ok(layout);
        }
        let lock = self.lock_for(user);
        let _g = lock.lock();
        self.load_locked(user)
    }

    /// Commits a whole client-held layout. Its version must not be older
    /// than the stored one.
    pub fn snapshot_on_disconnect(&self, user: &UserId, layout: DashboardLayout) -> Result<u64, LayoutError> {
        if &layout.user_id != user {
            return Err(LayoutError::InvalidLayout("layout belongs to another user".into()));
        }
        layout.check_structure()?;
        let lock = self.lock_for(user);
        let _g = lock.lock();
        let stored = self.load_locked(user)?;
        if layout.version < stored.version {
            return Err(LayoutError::VersionConflict {
                stored: stored.version,
                given: layout.version,
            });
        }
        let known: HashSet<&InstanceId> = stored.instances().map(|w| &w.instance_id).collect();
        for w in layout.instances() {
            if !known.contains(&w.instance_id) && !self.registry.contains(&w.descriptor_id) {
                return Err(LayoutError::UnknownDescriptor(w.descriptor_id.clone()));
            }
        }
        let committed = DashboardLayout {
            version: stored.version + 1,
            ..layout
        };
        self.store.put_json(&keys::layout(user), &committed)?;
        Ok(committed.version)
    }

    /// Applies one mutation, checking `expected_version` against the stored
    /// version when given.
    pub fn apply_op(
        &self,
        user: &UserId,
        expected_version: Option<u64>,
        op: LayoutOp,
    ) -> Result<OpOutcome, LayoutError> {
        let lock = self.lock_for(user);
        let _g = lock.lock();
        let mut layout = self.load_locked(user)?;
        if let Some(v) = expected_version {
            if v != layout.version {
                return Err(LayoutError::VersionConflict {
                    stored: layout.version,
                    given: v,
                });
            }
        }

        let mut usage: Vec<(DescriptorId, UsageEvent)> = Vec::new();
        let mut instance = None;
        let mut tab = None;

        match op {
            LayoutOp::Add {
                tab_id,
                descriptor_id,
                config,
            } => {
                let ti = layout
                    .tab_index(&tab_id)
                    .ok_or_else(|| LayoutError::UnknownTab(tab_id.clone()))?;
                if !self.registry.contains(&descriptor_id) {
                    return Err(LayoutError::UnknownDescriptor(descriptor_id));
                }
                let w = WidgetInstance {
                    instance_id: InstanceId::generate(),
                    descriptor_id: descriptor_id.clone(),
                    config,
                };
                layout.tabs[ti].widgets.push(w.clone());
                usage.push((descriptor_id, UsageEvent::Added));
                instance = Some(w);
            }
            LayoutOp::Move {
                instance_id,
                target_tab_id,
                target_position,
            } => {
                let (src_tab, src_pos) = layout
                    .locate(&instance_id)
                    .ok_or_else(|| LayoutError::UnknownInstance(instance_id.clone()))?;
                let dst_tab = layout
                    .tab_index(&target_tab_id)
                    .ok_or_else(|| LayoutError::UnknownTab(target_tab_id.clone()))?;
                let max = if src_tab == dst_tab {
                    layout.tabs[dst_tab].widgets.len() - 1
                } else {
                    layout.tabs[dst_tab].widgets.len()
                };
                if target_position > max {
                    return Err(LayoutError::PositionOutOfRange {
                        position: target_position,
                        max,
                    });
                }
                let w = layout.tabs[src_tab].widgets.remove(src_pos);
                layout.tabs[dst_tab].widgets.insert(target_position, w);
            }
            LayoutOp::Remove { instance_id } => {
                let (ti, pos) = layout
                    .locate(&instance_id)
                    .ok_or_else(|| LayoutError::UnknownInstance(instance_id.clone()))?;
                let w = layout.tabs[ti].widgets.remove(pos);
                usage.push((w.descriptor_id, UsageEvent::Removed));
            }
            LayoutOp::CreateTab { name } => {
                let name = name.trim().to_owned();
                if name.is_empty() {
                    return Err(LayoutError::InvalidTabName);
                }
                if layout.tabs.iter().any(|t| t.name == name) {
                    return Err(LayoutError::DuplicateTabName(name));
                }
                let t = Tab {
                    tab_id: TabId::generate(),
                    name,
                    widgets: Vec::new(),
                };
                layout.tabs.push(t.clone());
                tab = Some(t);
            }
            LayoutOp::DeleteTab { tab_id } => {
                let ti = layout
                    .tab_index(&tab_id)
                    .ok_or_else(|| LayoutError::UnknownTab(tab_id.clone()))?;
                if layout.tabs.len() == 1 {
                    return Err(LayoutError::LastTabUndeletable);
                }
                let removed = layout.tabs.remove(ti);
                usage.extend(
                    removed
                        .widgets
                        .into_iter()
                        .map(|w| (w.descriptor_id, UsageEvent::Removed)),
                );
            }
        }

        layout.version += 1;
        self.store.put_json(&keys::layout(user), &layout)?;
        for (descriptor, event) in usage {
            // A descriptor that was present at insertion stays in the
            // catalog, so only store failures can surface here.
            self.registry.record_usage(&descriptor, user, event)?;
        }
        Ok(OpOutcome {
            layout,
            instance,
            tab,
        })
    }

    pub fn add_widget(
        &self,
        user: &UserId,
        tab_id: &TabId,
        descriptor_id: &DescriptorId,
        config: WidgetConfig,
    ) -> Result<WidgetInstance, LayoutError> {
        let out = self.apply_op(
            user,
            None,
            LayoutOp::Add {
                tab_id: tab_id.clone(),
                descriptor_id: descriptor_id.clone(),
                config,
            },
        )?;
        Ok(out.instance.expect("add yields an instance"))
    }

    pub fn move_widget(
        &self,
        user: &UserId,
        instance_id: &InstanceId,
        target_tab_id: &TabId,
        target_position: usize,
    ) -> Result<DashboardLayout, LayoutError> {
        self.apply_op(
            user,
            None,
            LayoutOp::Move {
                instance_id: instance_id.clone(),
                target_tab_id: target_tab_id.clone(),
                target_position,
            },
        )
        .map(|o| o.layout)
    }

    pub fn remove_widget(&self, user: &UserId, instance_id: &InstanceId) -> Result<DashboardLayout, LayoutError> {
        self.apply_op(
            user,
            None,
            LayoutOp::Remove {
                instance_id: instance_id.clone(),
            },
        )
        .map(|o| o.layout)
    }

    pub fn create_tab(&self, user: &UserId, name: &str) -> Result<Tab, LayoutError> {
        let out = self.apply_op(user, None, LayoutOp::CreateTab { name: name.to_owned() })?;
        Ok(out.tab.expect("create_tab yields a tab"))
    }

    pub fn delete_tab(&self, user: &UserId, tab_id: &TabId) -> Result<DashboardLayout, LayoutError> {
        self.apply_op(user, None, LayoutOp::DeleteTab { tab_id: tab_id.clone() })
            .map(|o| o.layout)
    }

    pub fn find_instance(&self, user: &UserId, id: &InstanceId) -> Result<WidgetInstance, LayoutError> {
        self.restore_on_connect(user)?
            .find_instance(id)
            .cloned()
            .ok_or_else(|| LayoutError::UnknownInstance(id.clone()))
    }
}

impl SessionHooks for LayoutService {
    fn on_connect(&self, user: &UserId) -> Result<(), LayoutError> {
        self.restore_on_connect(user).map(|_| ())
    }

    /// Mutations are already durable, so without a client copy this only
    /// makes sure a layout document exists.
    fn on_disconnect(&self, user: &UserId, pending: Option<DashboardLayout>) -> Result<(), LayoutError> {
        match pending {
            Some(layout) => self.snapshot_on_disconnect(user, layout).map(|_| ()),
            None => self.restore_on_connect(user).map(|_| ()),
        }
    }
}
