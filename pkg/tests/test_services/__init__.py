"""services 层测试。"""
